use nalgebra::Vector3;

use crate::geometry::rotation_about;

/// Least-squares rotation about unit axis `g` plus translation mapping each
/// source point onto its target: minimizes Σ‖R(θ, g)·pᵢ + t − qᵢ‖².
///
/// Returns `(θ, t)`. The component of each centered point along `g` is
/// unaffected by R, so only the in-plane parts decide θ. Degenerate input
/// (all in-plane parts vanish) yields θ = 0. An empty slice yields the
/// identity.
pub fn constrained_rigid_fit(pairs: &[(Vector3<f64>, Vector3<f64>)], g: &Vector3<f64>) -> (f64, Vector3<f64>) {
    if pairs.is_empty() {
        return (0.0, Vector3::zeros());
    }
    let n = pairs.len() as f64;
    let (sp, sq) = pairs.iter().fold((Vector3::zeros(), Vector3::zeros()), |(a, b), (p, q)| (a + p, b + q));
    let (p_bar, q_bar) = (sp / n, sq / n);

    let mut dot = 0.0;
    let mut cross = 0.0;
    for (p, q) in pairs {
        let a = p - p_bar;
        let b = q - q_bar;
        let a = a - g * g.dot(&a);
        let b = b - g * g.dot(&b);
        dot += a.dot(&b);
        cross += a.cross(&b).dot(g);
    }
    let theta = if dot == 0.0 && cross == 0.0 { 0.0 } else { cross.atan2(dot) };
    let t = q_bar - rotation_about(theta, g) * p_bar;
    (theta, t)
}

/// Σ‖R(θ, g)·pᵢ + t − qᵢ‖².
pub fn rigid_objective(pairs: &[(Vector3<f64>, Vector3<f64>)], g: &Vector3<f64>, theta: f64, t: &Vector3<f64>) -> f64 {
    let r = rotation_about(theta, g);
    pairs.iter().map(|(p, q)| (r * p + t - q).norm_squared()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pairs(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        (0..n)
            .map(|_| {
                let p = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                (p, Vector3::zeros())
            })
            .collect()
    }

    #[test]
    fn identity_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs: Vec<_> = random_pairs(&mut rng, 20).into_iter().map(|(p, _)| (p, p)).collect();
        let (theta, t) = constrained_rigid_fit(&pairs, &Vector3::y());
        assert!(theta.abs() < 1e-12);
        assert!(t.norm() < 1e-12);
    }

    #[test]
    fn recovers_exact_generative_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Vector3::y();
        let r = rotation_about(0.3, &g);
        let t0 = Vector3::new(0.1, 0.0, -0.2);
        let pairs: Vec<_> = random_pairs(&mut rng, 30).into_iter().map(|(p, _)| (p, r * p + t0)).collect();
        let (theta, t) = constrained_rigid_fit(&pairs, &g);
        assert!((theta - 0.3).abs() < 1e-9);
        assert!((t - t0).norm() < 1e-9);
    }

    #[test]
    fn tilted_gravity_axis() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Vector3::new(0.2, -0.9, 0.3).normalize();
        let r = rotation_about(-1.1, &g);
        let t0 = Vector3::new(0.5, 0.2, 1.0);
        let pairs: Vec<_> = random_pairs(&mut rng, 30).into_iter().map(|(p, _)| (p, r * p + t0)).collect();
        let (theta, t) = constrained_rigid_fit(&pairs, &g);
        assert!((theta + 1.1).abs() < 1e-9);
        assert!((t - t0).norm() < 1e-9);
        let rg = rotation_about(theta, &g) * g;
        assert!((rg - g).norm() < 1e-12);
    }

    #[test]
    fn collapsed_points_default_to_zero_yaw() {
        let p = Vector3::new(0.3, 0.1, 0.2);
        let pairs = vec![(p, p + Vector3::x()); 4];
        let (theta, t) = constrained_rigid_fit(&pairs, &Vector3::y());
        assert_eq!(theta, 0.0);
        assert!((t - Vector3::x()).norm() < 1e-12);
    }

    #[test]
    fn closed_form_beats_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Vector3::y();
        let r = rotation_about(0.8, &g);
        let pairs: Vec<_> = random_pairs(&mut rng, 50)
            .into_iter()
            .map(|(p, _)| {
                let noise = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
                (p, r * p + Vector3::new(0.2, 0.1, 0.0) + noise)
            })
            .collect();
        let (theta, t) = constrained_rigid_fit(&pairs, &g);
        let best = rigid_objective(&pairs, &g, theta, &t);
        let n = pairs.len() as f64;
        let p_bar = pairs.iter().map(|x| x.0).sum::<Vector3<f64>>() / n;
        let q_bar = pairs.iter().map(|x| x.1).sum::<Vector3<f64>>() / n;
        let steps = (2.0 * std::f64::consts::PI / 0.001) as usize;
        for i in 0..=steps {
            let th = -std::f64::consts::PI + i as f64 * 0.001;
            let tt = q_bar - rotation_about(th, &g) * p_bar;
            assert!(best <= rigid_objective(&pairs, &g, th, &tt) + 1e-12);
        }
    }
}
