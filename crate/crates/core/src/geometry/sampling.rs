//! Deterministic point samplers for validating a set empirically:
//! strictly inside, on a face, and strictly outside.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::polytope::{GeomError, Polytope};

/// Steps of the chord walk taken between emitted interior points.
const WALK_STRIDE: usize = 8;
/// Fraction of each chord kept, leaving a strict-interior margin.
const CHORD_SHRINK: f64 = 0.99;
/// Chord half-length cap for directions the set does not bound.
const CHORD_CAP: f64 = 1e6;

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let d = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = d.norm();
        if norm > 1e-9 {
            return d / norm;
        }
    }
}

/// Chord of the set through `x` along `d`: the interval of `t` keeping
/// `x + t d` feasible, capped, together with the row index that blocks
/// growth (none when the cap blocks first).
fn chord(set: &Polytope, x: &DVector<f64>, d: &DVector<f64>) -> (f64, f64, Option<usize>) {
    let mut t_lo = -CHORD_CAP;
    let mut t_hi = CHORD_CAP;
    let mut hi_row = None;
    for i in 0..set.n_rows() {
        let hd = set.lhs().row(i).transpose().dot(d);
        let slack = (set.rhs()[i] - set.lhs().row(i).transpose().dot(x)).max(0.0);
        if hd > 1e-12 {
            let t = slack / hd;
            if t < t_hi {
                t_hi = t;
                hi_row = Some(i);
            }
        } else if hd < -1e-12 {
            let t = slack / hd;
            if t > t_lo {
                t_lo = t;
            }
        }
    }
    (t_lo, t_hi, hi_row)
}

fn start_point(set: &Polytope) -> Result<DVector<f64>, GeomError> {
    if set.is_empty_set() {
        return Err(GeomError::EmptyResult);
    }
    let (center, radius) = set.chebyshev().ok_or(GeomError::EmptyResult)?;
    if radius <= 1e-12 {
        return Err(GeomError::Sampling("set has no interior to sample".into()));
    }
    Ok(center)
}

/// Points strictly inside the set, by a chord walk from the largest-ball
/// center. Coverage is approximately uniform for well-conditioned sets;
/// the guarantee is only strict membership.
pub fn interior_points(
    set: &Polytope,
    count: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>, GeomError> {
    let center = start_point(set)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = center.clone();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        for _ in 0..WALK_STRIDE {
            let d = random_direction(&mut rng, set.dim());
            let (t_lo, t_hi, _) = chord(set, &x, &d);
            let t = rng.random_range(CHORD_SHRINK * t_lo..=CHORD_SHRINK * t_hi);
            x += t * &d;
        }
        // Rounding across many steps can graze a face; restart from the
        // center rather than emit a point on the boundary.
        if set.contains(&x, -1e-12) {
            out.push(x.clone());
        } else {
            x = center.clone();
        }
    }
    Ok(out)
}

/// Points on the boundary: each is the exit point of a ray from the
/// center, so exactly one row is active up to rounding. Directions in
/// which the set is unbounded are redrawn.
pub fn boundary_points(
    set: &Polytope,
    count: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>, GeomError> {
    ray_points(set, count, seed, |t_hi| t_hi)
}

/// Points strictly outside the set, each obtained by overshooting a
/// boundary ray by 10 to 100 percent.
pub fn exterior_points(
    set: &Polytope,
    count: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>, GeomError> {
    let mut stretch_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    ray_points(set, count, seed, move |t_hi| {
        t_hi * stretch_rng.random_range(1.1..2.0)
    })
}

fn ray_points(
    set: &Polytope,
    count: usize,
    seed: u64,
    mut scale: impl FnMut(f64) -> f64,
) -> Result<Vec<DVector<f64>>, GeomError> {
    let center = start_point(set)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    let budget = 1000 * count.max(1);
    while out.len() < count {
        attempts += 1;
        if attempts > budget {
            return Err(GeomError::Sampling(format!(
                "only {} of {count} rays hit a face; set is unbounded in most directions",
                out.len()
            )));
        }
        let d = random_direction(&mut rng, set.dim());
        let (_, t_hi, hi_row) = chord(set, &center, &d);
        if hi_row.is_none() {
            continue;
        }
        out.push(&center + scale(t_hi) * &d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::box_polytope;
    use nalgebra::{dmatrix, dvector};

    fn margin(set: &Polytope, x: &DVector<f64>) -> f64 {
        // Smallest normalized slack: positive inside, negative outside.
        let n = set.normalize_rows().unwrap();
        (n.rhs() - n.lhs() * x).min()
    }

    #[test]
    fn interior_samples_stay_strictly_inside() {
        let cube = box_polytope(&[-1.0, -1.0, -1.0], &[1.0, 1.0, 1.0]).unwrap();
        let pts = interior_points(&cube, 200, 7).unwrap();
        assert_eq!(pts.len(), 200);
        for x in &pts {
            assert!(margin(&cube, x) > 0.0);
        }
        // The walk should actually spread out, not cling to the center.
        let spread = pts.iter().map(|x| x.amax()).fold(0.0_f64, f64::max);
        assert!(spread > 0.5, "walk never left the center region: {spread}");
    }

    #[test]
    fn boundary_samples_sit_on_a_face() {
        let cube = box_polytope(&[-1.0, -1.0, -1.0], &[1.0, 1.0, 1.0]).unwrap();
        let pts = boundary_points(&cube, 100, 11).unwrap();
        for x in &pts {
            assert!(margin(&cube, x).abs() <= 1e-12);
        }
    }

    #[test]
    fn exterior_samples_are_strictly_outside() {
        let cube = box_polytope(&[-1.0, -1.0, -1.0], &[1.0, 1.0, 1.0]).unwrap();
        let pts = exterior_points(&cube, 100, 13).unwrap();
        for x in &pts {
            assert!(margin(&cube, x) < -1e-9);
        }
    }

    #[test]
    fn samplers_are_deterministic_in_the_seed() {
        let tri = Polytope::from_rows(
            dmatrix![1.0, 1.0; -1.0, 0.0; 0.0, -1.0],
            dvector![1.0, 0.0, 0.0],
        )
        .unwrap();
        let a = interior_points(&tri, 20, 42).unwrap();
        let b = interior_points(&tri, 20, 42).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x[0].to_bits(), y[0].to_bits());
            assert_eq!(x[1].to_bits(), y[1].to_bits());
        }
        let c = interior_points(&tri, 20, 43).unwrap();
        assert!(a[0] != c[0]);
    }

    #[test]
    fn unbounded_directions_are_skipped_not_fatal() {
        // A slab: bounded only along the first coordinate.
        let slab = Polytope::from_rows(dmatrix![1.0, 0.0; -1.0, 0.0], dvector![1.0, 1.0]).unwrap();
        let pts = boundary_points(&slab, 20, 3).unwrap();
        for x in &pts {
            assert!((x[0].abs() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn empty_and_degenerate_sets_are_rejected() {
        assert!(matches!(
            interior_points(&Polytope::empty_set(2), 5, 0),
            Err(GeomError::EmptyResult)
        ));
        let point = box_polytope(&[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!(matches!(
            interior_points(&point, 5, 0),
            Err(GeomError::Sampling(_))
        ));
    }
}
