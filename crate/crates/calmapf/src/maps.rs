//! Built-in map layouts.
//!
//! The warehouse maps hold 1600 shelves (one item kind each), 80 caches and
//! either four unloading ports (one cache block of 4 rows x 5 columns next to
//! each port) or a single port with one 16 x 5 cache block. Cache columns can
//! be ablated right-to-left in steps of 16 total caches, so active cache
//! counts of 16, 32, 48, 64 and 80 are all reachable.

/// The 5x7 demonstration map: three shelves, two caches, one port.
pub const TOY: &str = "\
@@@@@@@
@S.C.U@
@S....@
@S.C..@
@@@@@@@
";

const ROWS: usize = 27;
const COLS: usize = 121;

/// Warehouse with four ports, each owning a 20-cache block and a quarter of
/// the agents.
pub fn warehouse_multi() -> String {
    let mut grid = frame_with_shelves();
    for &port_row in &[4usize, 10, 16, 22] {
        grid[port_row][1] = b'U';
        for row in [port_row - 2, port_row - 1, port_row + 1, port_row + 2] {
            for col in 3..=7 {
                grid[row][col] = b'C';
            }
        }
    }
    render(grid)
}

/// Warehouse with one port that can use all agents and all 80 caches.
pub fn warehouse_single() -> String {
    let mut grid = frame_with_shelves();
    grid[13][1] = b'U';
    for row in 5..=21 {
        if row == 13 {
            continue;
        }
        for col in 3..=7 {
            grid[row][col] = b'C';
        }
    }
    render(grid)
}

fn frame_with_shelves() -> Vec<Vec<u8>> {
    let mut grid = vec![vec![b'.'; COLS]; ROWS];
    for col in 0..COLS {
        grid[0][col] = b'@';
        grid[ROWS - 1][col] = b'@';
    }
    for row in grid.iter_mut() {
        row[0] = b'@';
        row[COLS - 1] = b'@';
    }
    // Eight shelf slabs of two rows, ten blocks of ten columns each, with a
    // one-cell aisle ring around every slab block.
    for pair in 0..8 {
        let top = 2 + 3 * pair;
        for row in [top, top + 1] {
            for block in 0..10 {
                let start = 10 + 11 * block;
                for col in start..start + 10 {
                    grid[row][col] = b'S';
                }
            }
        }
    }
    grid
}

fn render(grid: Vec<Vec<u8>>) -> String {
    let mut out = String::with_capacity((COLS + 1) * ROWS);
    for row in grid {
        out.push_str(std::str::from_utf8(&row).unwrap());
        out.push('\n');
    }
    out
}
