//! Uniform sampling in a `d`-dimensional ball.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::math;

/// Uniform draw from `{v : ‖v‖ ≤ radius}`: a Gaussian direction scaled to
/// norm `radius · U^(1/d)`.
pub fn ball_sample<R: Rng + ?Sized>(radius: f64, d: usize, rng: &mut R) -> Vec<f64> {
    if radius <= 0.0 || d == 0 {
        return vec![0.0; d];
    }
    let mut v: Vec<f64> = loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if math::norm_sq(&v) > 0.0 {
            break v;
        }
    };
    let u: f64 = rng.random();
    let scale = radius * math::powf(u, 1.0 / d as f64) / math::norm(&v);
    v.iter_mut().for_each(|x| *x *= scale);
    // rounding may push the norm a hair above the radius
    let mut n = math::norm(&v);
    while n > radius {
        let fix = radius / n * (1.0 - f64::EPSILON);
        v.iter_mut().for_each(|x| *x *= fix);
        n = math::norm(&v);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Entity, Purpose};

    #[test]
    fn zero_radius_gives_origin() {
        let mut r = stream(1, Entity::Arbiter, Purpose::Noise);
        assert_eq!(ball_sample(0.0, 4, &mut r), vec![0.0; 4]);
    }

    #[test]
    fn never_leaves_the_ball() {
        let mut r = stream(1, Entity::Arbiter, Purpose::Noise);
        for d in [1, 2, 7, 30] {
            for _ in 0..2000 {
                assert!(math::norm(&ball_sample(0.37, d, &mut r)) <= 0.37);
            }
        }
    }

    #[test]
    fn half_radius_fraction_in_plane() {
        let mut r = stream(2, Entity::Arbiter, Purpose::Noise);
        let n = 100_000;
        let inside = (0..n)
            .filter(|_| math::norm(&ball_sample(1.0, 2, &mut r)) <= 0.5)
            .count();
        assert!((inside as f64 / n as f64 - 0.25).abs() < 0.01);
    }
}
