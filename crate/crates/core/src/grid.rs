//! Dense row-major 2D grids and the two mask flavours built on them.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 2D grid. Cell `(row, col)` covers the pixel whose center is
/// `(col + 0.5, row + 0.5)` in image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Grid {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "grid of {width}x{height} needs {} cells, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(width, height)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Option<T> {
        (row < self.height && col < self.width).then(|| self.data[row * self.width + col])
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    pub fn zip_map<U: Copy, V: Copy>(
        &self,
        other: &Grid<U>,
        mut f: impl FnMut(T, U) -> V,
    ) -> Result<Grid<V>> {
        self.ensure_same_dims(other)?;
        Ok(Grid {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn indexed(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        let w = self.width.max(1);
        self.data
            .iter()
            .enumerate()
            .map(move |(i, &v)| (i / w, i % w, v))
    }

    pub fn ensure_same_dims<U>(&self, other: &Grid<U>) -> Result<()> {
        let other_dims = (other.width, other.height);
        if self.dims() != other_dims {
            return Err(Error::Dimension {
                expected: self.dims(),
                found: other_dims,
            });
        }
        Ok(())
    }

    /// Sub-grid with top-left corner `(x0, y0)`; the rectangle must fit.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Grid<T>> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::invalid(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds grid {}x{}",
                self.width, self.height
            )));
        }
        Ok(Grid::from_fn(width, height, |r, c| self[(y0 + r, x0 + c)]))
    }

    /// Column reversal.
    pub fn hflip(&self) -> Grid<T> {
        Grid::from_fn(self.width, self.height, |r, c| {
            self[(r, self.width - 1 - c)]
        })
    }
}

impl<T> Index<(usize, usize)> for Grid<T> {
    type Output = T;

    fn index(&self, (row, col): (usize, usize)) -> &T {
        debug_assert!(row < self.height && col < self.width);
        &self.data[row * self.width + col]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid<T> {
    fn index_mut(&mut self, (row, col): (usize, usize)) -> &mut T {
        debug_assert!(row < self.height && col < self.width);
        &mut self.data[row * self.width + col]
    }
}

/// Foreground/background flags.
pub type BinaryMask = Grid<bool>;

impl Grid<bool> {
    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_map(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_map(other, |a, b| a && b)
    }

    /// Cells of `self` that are not set in `other`.
    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_map(other, |a, b| a && !b)
    }
}

/// Normalized distance to the nearest object: 0 on the object, 1 at `d_max`
/// input pixels or farther.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMask {
    values: Grid<f64>,
    d_max: u32,
}

impl DistanceMask {
    pub fn new(values: Grid<f64>, d_max: u32) -> Result<Self> {
        if d_max == 0 {
            return Err(Error::invalid("d_max must be at least 1"));
        }
        if let Some((r, c, v)) = values
            .indexed()
            .find(|&(_, _, v)| !(0.0..=1.0).contains(&v))
        {
            return Err(Error::invalid(format!(
                "distance mask value {v} at ({r}, {c}) outside [0, 1]"
            )));
        }
        Ok(DistanceMask { values, d_max })
    }

    pub fn filled(width: usize, height: usize, value: f64, d_max: u32) -> Result<Self> {
        DistanceMask::new(Grid::new(width, height, value), d_max)
    }

    pub(crate) fn from_trusted(values: Grid<f64>, d_max: u32) -> Self {
        debug_assert!(values.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        DistanceMask { values, d_max }
    }

    pub fn values(&self) -> &Grid<f64> {
        &self.values
    }

    pub fn into_values(self) -> Grid<f64> {
        self.values
    }

    pub fn d_max(&self) -> u32 {
        self.d_max
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        Ok(DistanceMask {
            values: self.values.crop(x0, y0, width, height)?,
            d_max: self.d_max,
        })
    }

    pub fn hflip(&self) -> Self {
        DistanceMask {
            values: self.values.hflip(),
            d_max: self.d_max,
        }
    }
}

/// The two detected object classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Cables,
    Pylons,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 2] = [ObjectClass::Cables, ObjectClass::Pylons];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Cables => "cables",
            ObjectClass::Pylons => "pylons",
        }
    }
}

impl std::fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ObjectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cables" | "cable" => Ok(ObjectClass::Cables),
            "pylons" | "pylon" => Ok(ObjectClass::Pylons),
            other => Err(Error::invalid(format!("unknown object class `{other}`"))),
        }
    }
}

/// One value per object class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPair<T> {
    pub cables: T,
    pub pylons: T,
}

impl<T> ClassPair<T> {
    pub fn new(cables: T, pylons: T) -> Self {
        ClassPair { cables, pylons }
    }

    pub fn get(&self, class: ObjectClass) -> &T {
        match class {
            ObjectClass::Cables => &self.cables,
            ObjectClass::Pylons => &self.pylons,
        }
    }

    pub fn get_mut(&mut self, class: ObjectClass) -> &mut T {
        match class {
            ObjectClass::Cables => &mut self.cables,
            ObjectClass::Pylons => &mut self.pylons,
        }
    }

    pub fn map<U>(self, mut f: impl FnMut(ObjectClass, T) -> U) -> ClassPair<U> {
        ClassPair {
            cables: f(ObjectClass::Cables, self.cables),
            pylons: f(ObjectClass::Pylons, self.pylons),
        }
    }

    pub fn try_map<U, E>(
        self,
        mut f: impl FnMut(ObjectClass, T) -> std::result::Result<U, E>,
    ) -> std::result::Result<ClassPair<U>, E> {
        Ok(ClassPair {
            cables: f(ObjectClass::Cables, self.cables)?,
            pylons: f(ObjectClass::Pylons, self.pylons)?,
        })
    }

    pub fn as_ref(&self) -> ClassPair<&T> {
        ClassPair {
            cables: &self.cables,
            pylons: &self.pylons,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_hflip() {
        let g = Grid::from_fn(4, 3, |r, c| r * 10 + c);
        let c = g.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.as_slice(), &[11, 12, 21, 22]);
        assert_eq!(g.hflip().row(0), &[3, 2, 1, 0]);
        assert_eq!(g.hflip().hflip(), g);
        assert!(g.crop(3, 0, 2, 1).is_err());
    }

    #[test]
    fn distance_mask_rejects_out_of_range() {
        assert!(DistanceMask::new(Grid::new(2, 2, 1.5), 128).is_err());
        assert!(DistanceMask::new(Grid::new(2, 2, f64::NAN), 128).is_err());
        assert!(DistanceMask::new(Grid::new(2, 2, 0.5), 0).is_err());
        assert!(DistanceMask::new(Grid::new(2, 2, 0.5), 128).is_ok());
    }

    #[test]
    fn zip_map_checks_dims() {
        let a = Grid::new(2, 2, true);
        let b = Grid::new(3, 2, false);
        assert!(matches!(a.union(&b), Err(Error::Dimension { .. })));
    }
}
