//! Summed-area tables over per-pixel scalar maps.

use crate::geometry::Rect;
use crate::Real;

/// Summed-area table: `sum(x, y)` holds the sum of the map over pixels
/// `(x', y')` with `x' < x`, `y' < y`, so the table is one row and one column
/// larger than the image and rectangle sums need four lookups.
#[derive(Debug, Clone)]
pub struct Sat<T> {
    width: usize,
    sum: Vec<T>,
}

impl<T: Real> Sat<T> {
    /// Builds the table for a row-major `width x height` map.
    pub fn build(map: &[T], width: usize, height: usize) -> Self {
        debug_assert_eq!(map.len(), width * height);
        let w1 = width + 1;
        let mut sum = vec![T::zero(); w1 * (height + 1)];
        for y in 0..height {
            let mut row = T::zero();
            for x in 0..width {
                row += map[y * width + x];
                sum[(y + 1) * w1 + (x + 1)] = sum[y * w1 + (x + 1)] + row;
            }
        }
        Sat { width, sum }
    }

    /// Sum of the map over the inclusive pixel rectangle.
    ///
    /// The rectangle must lie inside the image the table was built from.
    pub fn query(&self, rect: Rect) -> T {
        debug_assert!(rect.x0 >= 0 && rect.y0 >= 0 && rect.x1 >= rect.x0 && rect.y1 >= rect.y0);
        let w1 = self.width + 1;
        let (x0, y0) = (rect.x0 as usize, rect.y0 as usize);
        let (x1, y1) = (rect.x1 as usize + 1, rect.y1 as usize + 1);
        self.sum[y1 * w1 + x1] + self.sum[y0 * w1 + x0]
            - self.sum[y1 * w1 + x0]
            - self.sum[y0 * w1 + x1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive(map: &[f64], width: usize, rect: Rect) -> f64 {
        let mut s = 0.0;
        for y in rect.y0..=rect.y1 {
            for x in rect.x0..=rect.x1 {
                s += map[y as usize * width + x as usize];
            }
        }
        s
    }

    #[test]
    fn single_pixel_and_full_image() {
        let map = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let sat = Sat::build(&map, 3, 2);
        assert_eq!(sat.query(Rect { x0: 1, y0: 1, x1: 1, y1: 1 }), 5.0);
        assert_eq!(sat.query(Rect { x0: 0, y0: 0, x1: 2, y1: 1 }), 21.0);
    }

    proptest! {
        #[test]
        fn matches_naive_rectangle_sums(
            vals in proptest::collection::vec(0.0f64..1.0, 48),
            x0 in 0i32..8, y0 in 0i32..6, dx in 0i32..8, dy in 0i32..6,
        ) {
            let (w, h) = (8usize, 6usize);
            let rect = Rect {
                x0,
                y0,
                x1: (x0 + dx).min(w as i32 - 1),
                y1: (y0 + dy).min(h as i32 - 1),
            };
            prop_assume!(rect.x1 >= rect.x0 && rect.y1 >= rect.y0);
            let sat = Sat::build(&vals, w, h);
            let diff = (sat.query(rect) - naive(&vals, w, rect)).abs();
            prop_assert!(diff < 1e-9);
        }
    }
}
