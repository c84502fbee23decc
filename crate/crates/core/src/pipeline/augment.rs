//! The eight symmetries of the square, applied jointly to input and target.
//!
//! Transform `i` rotates by `i % 4` quarter turns and then, for `i >= 4`,
//! mirrors horizontally. Index 0 is the identity.

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Where pixel (x, y) of an n x n plane lands under transform `t`.
fn destination(t: usize, n: usize, x: usize, y: usize) -> (usize, usize) {
    let (mut x, mut y) = (x, y);
    for _ in 0..t % 4 {
        (x, y) = (y, n - 1 - x);
    }
    if t >= 4 {
        x = n - 1 - x;
    }
    (x, y)
}

/// Applies transform `t` (0..8) to every channel of a C x n x n tensor.
pub fn dihedral_transform(t: usize, input: &Tensor) -> Result<Tensor> {
    assert!(t < 8, "dihedral transform index {t} out of range");
    let (c, h, w) = input.dims3()?;
    if h != w {
        return Err(Error::ShapeMismatch(format!("dihedral augmentation needs square planes, got {h}x{w}")));
    }
    let n = h;
    let mut out = vec![0.0; input.len()];
    for ci in 0..c {
        let src = input.channel(ci);
        let dst = &mut out[ci * n * n..(ci + 1) * n * n];
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = destination(t, n, x, y);
                dst[dy * n + dx] = src[y * n + x];
            }
        }
    }
    Tensor::from_vec(input.shape(), out)
}

/// All eight jointly transformed (input, target) pairs, identity first.
pub fn dihedral8(input: &Tensor, target: &Tensor) -> Result<Vec<(Tensor, Tensor)>> {
    (0..8).map(|t| Ok((dihedral_transform(t, input)?, dihedral_transform(t, target)?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_turn_moves_corner() {
        let mut t = Tensor::zeros(&[1, 3, 3]);
        t.data_mut()[0] = 1.0; // (0, 0)
        let r = dihedral_transform(1, &t).unwrap();
        assert_eq!(r.data()[2 * 3], 1.0); // lands on (0, 2)
        let f = dihedral_transform(4, &t).unwrap();
        assert_eq!(f.data()[2], 1.0); // mirrored to (2, 0)
    }

    #[test]
    fn non_square_is_rejected() {
        assert!(dihedral_transform(1, &Tensor::zeros(&[1, 2, 3])).is_err());
    }

    #[test]
    fn input_and_target_move_together() {
        let input = Tensor::from_vec(&[2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let target = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        for (i, (a, b)) in dihedral8(&input, &target).unwrap().iter().enumerate() {
            assert_eq!(a.channel(0), b.data(), "transform {i}");
        }
    }
}
