use crate::error::Result;
use crate::grid::Grid;

/// Binary motion mask; `true` marks dynamic pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub data: Grid<bool>,
    pub timestamp: i64,
}

impl Mask {
    pub fn new(data: Grid<bool>, timestamp: i64) -> Self {
        Self { data, timestamp }
    }

    pub fn empty(height: usize, width: usize, timestamp: i64) -> Self {
        Self::new(Grid::filled(height, width, false), timestamp)
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<bool>, timestamp: i64) -> Result<Self> {
        Ok(Self::new(Grid::from_vec(height, width, data)?, timestamp))
    }

    pub fn dims(&self) -> (usize, usize) {
        self.data.dims()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> bool {
        *self.data.get(y, x)
    }

    pub fn count(&self) -> usize {
        self.data.as_slice().iter().filter(|v| **v).count()
    }

    pub fn negated(&self) -> Mask {
        Mask::new(self.data.map(|v| !v), self.timestamp)
    }
}
