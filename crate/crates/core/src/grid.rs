//! Dense row-major 3D grid indexed as (d, h, w) with `w` fastest.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid3<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Clone> Grid3<T> {
    pub fn filled(dims: [usize; 3], value: T) -> Self {
        Grid3 {
            dims,
            data: vec![value; dims[0] * dims[1] * dims[2]],
        }
    }
}

impl<T> Grid3<T> {
    pub fn from_vec(dims: [usize; 3], data: Vec<T>) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::Shape(format!(
                "grid {:?} needs {} values, got {}",
                dims,
                n,
                data.len()
            )));
        }
        Ok(Grid3 { dims, data })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for d in 0..dims[0] {
            for h in 0..dims[1] {
                for w in 0..dims[2] {
                    data.push(f(d, h, w));
                }
            }
        }
        Grid3 { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.dims[1] + h) * self.dims[2] + w
    }

    /// Inverse of [`Grid3::index`].
    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let w = i % self.dims[2];
        let h = (i / self.dims[2]) % self.dims[1];
        let d = i / (self.dims[1] * self.dims[2]);
        [d, h, w]
    }

    #[inline]
    pub fn in_bounds(&self, d: isize, h: isize, w: isize) -> bool {
        d >= 0
            && h >= 0
            && w >= 0
            && (d as usize) < self.dims[0]
            && (h as usize) < self.dims[1]
            && (w as usize) < self.dims[2]
    }

    #[inline]
    pub fn get(&self, d: usize, h: usize, w: usize) -> &T {
        &self.data[self.index(d, h, w)]
    }

    #[inline]
    pub fn get_mut(&mut self, d: usize, h: usize, w: usize) -> &mut T {
        let i = self.index(d, h, w);
        &mut self.data[i]
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid3<U> {
        Grid3 {
            dims: self.dims,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// One (h, w) plane at depth `d`.
    pub fn slice(&self, d: usize) -> &[T] {
        let n = self.dims[1] * self.dims[2];
        &self.data[d * n..(d + 1) * n]
    }

    pub fn slice_mut(&mut self, d: usize) -> &mut [T] {
        let n = self.dims[1] * self.dims[2];
        &mut self.data[d * n..(d + 1) * n]
    }
}

impl<T> std::ops::Index<[usize; 3]> for Grid3<T> {
    type Output = T;

    #[inline]
    fn index(&self, [d, h, w]: [usize; 3]) -> &T {
        self.get(d, h, w)
    }
}

impl<T> std::ops::IndexMut<[usize; 3]> for Grid3<T> {
    #[inline]
    fn index_mut(&mut self, [d, h, w]: [usize; 3]) -> &mut T {
        self.get_mut(d, h, w)
    }
}

/// The six face neighbors of a voxel, skipping out-of-bounds positions.
pub fn face_neighbors(dims: [usize; 3], p: [usize; 3]) -> impl Iterator<Item = [usize; 3]> {
    const OFFSETS: [[isize; 3]; 6] = [
        [-1, 0, 0],
        [1, 0, 0],
        [0, -1, 0],
        [0, 1, 0],
        [0, 0, -1],
        [0, 0, 1],
    ];
    OFFSETS.iter().filter_map(move |o| {
        let q = [
            p[0] as isize + o[0],
            p[1] as isize + o[1],
            p[2] as isize + o[2],
        ];
        if q.iter().zip(dims.iter()).all(|(&c, &n)| c >= 0 && (c as usize) < n) {
            Some([q[0] as usize, q[1] as usize, q[2] as usize])
        } else {
            None
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_and_coords_agree() {
        let g = Grid3::filled([3, 4, 5], 0u8);
        for i in 0..g.len() {
            let [d, h, w] = g.coords(i);
            assert_eq!(g.index(d, h, w), i);
        }
    }

    #[test]
    fn corner_has_three_face_neighbors() {
        assert_eq!(face_neighbors([2, 2, 2], [0, 0, 0]).count(), 3);
        assert_eq!(face_neighbors([3, 3, 3], [1, 1, 1]).count(), 6);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Grid3::from_vec([2, 2, 2], vec![0u8; 7]).is_err());
    }
}
