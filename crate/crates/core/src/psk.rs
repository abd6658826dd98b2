//! Gray-labelled M-PSK constellation and phase slicer.

use std::f64::consts::TAU;

use crate::error::CodecError;
use crate::C64;

/// Angular distances closer than this count as a decision-boundary tie.
pub const TIE_TOLERANCE_RAD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Psk {
    order: usize,
    points: Vec<C64>,
}

/// Binary-reflected Gray code of `index`.
pub fn gray(index: usize) -> usize {
    index ^ (index >> 1)
}

impl Psk {
    /// Unit-modulus points `exp(j 2 pi m / M)`, `m = 0..M`.
    pub fn new(order: usize) -> Result<Self, CodecError> {
        if order < 2 || !order.is_power_of_two() {
            return Err(CodecError::BadConstellation(order));
        }
        let points = (0..order)
            .map(|m| C64::from_polar(1.0, TAU * m as f64 / order as f64))
            .collect();
        Ok(Psk { order, points })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.order.trailing_zeros() as usize
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn point(&self, index: usize) -> C64 {
        self.points[index]
    }

    /// Gray label bits of a point, most significant first.
    pub fn label_bits(&self, index: usize) -> impl Iterator<Item = u8> + '_ {
        let label = gray(index);
        let width = self.bits_per_symbol();
        (0..width).rev().map(move |b| ((label >> b) & 1) as u8)
    }

    /// Nearest point in phase. Ties go to the lower index and `z = 0`
    /// slices to index 0.
    pub fn slice(&self, z: C64) -> usize {
        if z.re == 0.0 && z.im == 0.0 {
            return 0;
        }
        let phase = z.arg().rem_euclid(TAU);
        let step = TAU / self.order as f64;
        let lower = ((phase / step).floor() as usize) % self.order;
        let upper = (lower + 1) % self.order;
        let dist = |m: usize| {
            let d = (phase - m as f64 * step).rem_euclid(TAU);
            d.min(TAU - d)
        };
        let (dl, du) = (dist(lower), dist(upper));
        if (du - dl).abs() <= TIE_TOLERANCE_RAD {
            lower.min(upper)
        } else if du < dl {
            upper
        } else {
            lower
        }
    }

    /// Index maximizing `Re{s * a}` over the constellation, lowest index on ties.
    pub fn best_rotation(&self, a: C64) -> usize {
        let mut best = 0;
        let mut best_metric = (self.points[0] * a).re;
        for (m, p) in self.points.iter().enumerate().skip(1) {
            let metric = (p * a).re;
            if metric > best_metric {
                best = m;
                best_metric = metric;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        let psk = Psk::new(8).unwrap();
        for m in 0..8 {
            let a: Vec<u8> = psk.label_bits(m).collect();
            let b: Vec<u8> = psk.label_bits((m + 1) % 8).collect();
            assert_eq!(a.len(), 3);
            assert_eq!(a.iter().zip(&b).filter(|(x, y)| x != y).count(), 1);
        }
    }

    #[test]
    fn slicer_examples() {
        let psk = Psk::new(8).unwrap();
        for m in 0..8 {
            assert_eq!(psk.slice(psk.point(m)), m);
            assert_eq!(psk.slice(psk.point(m) * 3.7), m);
        }
        assert_eq!(psk.slice(C64::new(0.0, 0.0)), 0);
        // boundary between 0 and 1
        assert_eq!(psk.slice(C64::from_polar(1.0, TAU / 16.0)), 0);
        // wrap boundary between 7 and 0 prefers 0
        assert_eq!(psk.slice(C64::from_polar(1.0, -TAU / 16.0)), 0);
    }

    #[test]
    fn rejects_bad_orders() {
        assert!(Psk::new(6).is_err());
        assert!(Psk::new(1).is_err());
        assert_eq!(Psk::new(2).unwrap().bits_per_symbol(), 1);
    }

    #[test]
    fn best_rotation_matches_conjugate_phase() {
        let psk = Psk::new(8).unwrap();
        for m in 0..8 {
            let a = psk.point(m).conj() * 2.5;
            assert_eq!(psk.best_rotation(a), m);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn slice_scale_invariant(re in -10.0f64..10.0, im in -10.0f64..10.0, c in 1e-3f64..1e3) {
                let psk = Psk::new(8).unwrap();
                let z = C64::new(re, im);
                prop_assume!(z.norm() > 1e-9);
                prop_assert_eq!(psk.slice(z * c), psk.slice(z));
            }
        }
    }
}
