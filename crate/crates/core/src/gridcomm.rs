use crate::error::{Error, Result};
use crate::msgnet::Comm;
use crate::procgrid::{GridShape, ProcessGrid};

/// A rank's world communicator together with its row and column
/// communicators on a process grid.
pub struct GridComm<'w> {
    pub grid: ProcessGrid,
    pub world: &'w mut Comm,
    /// Processes sharing rows Π (same `my_x`), indexed by `my_y`.
    pub row: Comm,
    /// Processes sharing columns Γ (same `my_y`), indexed by `my_x`.
    pub col: Comm,
}

impl<'w> GridComm<'w> {
    pub fn new(world: &'w mut Comm, shape: GridShape) -> Result<Self> {
        if world.size() != shape.p_total() {
            return Err(Error::Config(format!(
                "grid {shape} needs {} processes, the world has {}",
                shape.p_total(),
                world.size()
            )));
        }
        let grid = ProcessGrid::for_rank(shape, world.rank())?;
        let (row, col) = world.split(&grid)?;
        Ok(GridComm {
            grid,
            world,
            row,
            col,
        })
    }
}
