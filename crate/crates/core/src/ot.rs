//! Optimal-transport distances between equal-size empirical point sets.
//!
//! The sliced distance averages exact 1D distances over a fixed set of random
//! unit directions. In one dimension the optimal matching pairs order
//! statistics, so the 1D distance reduces to sorting.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::rng::{substream, Substream};

/// Largest set size accepted by [`wasserstein_exact`].
pub const EXACT_MAX_POINTS: usize = 8;

/// `n` points of dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    data: Vec<f64>,
    dim: usize,
}

impl PointSet {
    pub fn new(points: &[Vec<f64>]) -> Result<Self> {
        let first = points.first().ok_or_else(|| invalid("point set is empty"))?;
        let dim = first.len();
        let mut data = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(invalid(format!(
                    "point dimension {} differs from {}",
                    p.len(),
                    dim
                )));
            }
            data.extend_from_slice(p);
        }
        Self::from_flat(data, dim)
    }

    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("point dimension must be at least 1"));
        }
        if data.is_empty() || !data.len().is_multiple_of(dim) {
            return Err(invalid(format!(
                "flat buffer of length {} does not hold whole points of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("point set contains non-finite values"));
        }
        Ok(Self { data, dim })
    }

    /// One-dimensional set from scalars.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::from_flat(values.to_vec(), 1)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Unit directions used to slice point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    data: Vec<f64>,
    dim: usize,
    seed: u64,
}

impl DirectionSet {
    /// Builds a direction set from explicit vectors, normalizing each one.
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let ps = PointSet::new(vectors)?;
        let dim = ps.dim();
        let mut data = Vec::with_capacity(ps.data.len());
        for v in ps.points() {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(invalid("direction has zero norm"));
            }
            data.extend(v.iter().map(|x| x / norm));
        }
        Ok(Self { data, dim, seed: 0 })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn direction(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Draws `count` directions uniformly on the unit sphere in `dim` dimensions
/// (normalized standard-normal vectors).
pub fn sample_unit_directions(dim: usize, count: usize, seed: u64) -> Result<DirectionSet> {
    if dim == 0 || count == 0 {
        return Err(invalid(format!(
            "direction set needs dim >= 1 and count >= 1 (got dim={dim}, count={count})"
        )));
    }
    let mut rng = substream(seed, Substream::Projections);
    let mut data = Vec::with_capacity(dim * count);
    let mut v = vec![0.0; dim];
    for _ in 0..count {
        let norm = loop {
            for x in v.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-12 {
                break n;
            }
        };
        data.extend(v.iter().map(|x| x / norm));
    }
    Ok(DirectionSet { data, dim, seed })
}

/// Inner product of every point with `theta`, in point order.
pub fn project(ps: &PointSet, theta: &[f64]) -> Result<Vec<f64>> {
    if theta.len() != ps.dim() {
        return Err(invalid(format!(
            "direction dimension {} does not match point dimension {}",
            theta.len(),
            ps.dim()
        )));
    }
    Ok(project_unchecked(ps, theta))
}

fn project_unchecked(ps: &PointSet, theta: &[f64]) -> Vec<f64> {
    ps.points()
        .map(|p| p.iter().zip(theta).map(|(a, b)| a * b).sum())
        .collect()
}

/// Exact Wasserstein distance between two equal-size scalar samples:
/// the root of the summed squared gaps between matching order statistics.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid(format!(
            "samples have different sizes ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(invalid("samples are empty"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(invalid("samples contain non-finite values"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    Ok(sorted_cost(&mut a, &mut b))
}

fn sorted_cost(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Brute-force Wasserstein distance: minimum over all `n!` matchings.
/// Only meant as a reference for small sets.
pub fn wasserstein_exact(d1: &PointSet, d2: &PointSet) -> Result<f64> {
    check_pair(d1, d2)?;
    let n = d1.len();
    if n > EXACT_MAX_POINTS {
        return Err(Error::SizeLimit {
            n,
            max: EXACT_MAX_POINTS,
        });
    }
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| {
            (0..n).map(move |j| {
                d1.point(i)
                    .iter()
                    .zip(d2.point(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
        })
        .collect();

    // Heap's algorithm over the assignment i -> perm[i]
    let mut perm: Vec<usize> = (0..n).collect();
    let total = |perm: &[usize]| -> f64 { perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum() };
    let mut best = total(&perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(total(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best.sqrt())
}

fn check_pair(d1: &PointSet, d2: &PointSet) -> Result<()> {
    if d1.len() != d2.len() {
        return Err(invalid(format!(
            "point sets have different sizes ({} vs {})",
            d1.len(),
            d2.len()
        )));
    }
    if d1.dim() != d2.dim() {
        return Err(invalid(format!(
            "point sets have different dimensions ({} vs {})",
            d1.dim(),
            d2.dim()
        )));
    }
    Ok(())
}

fn check_sliced(d1: &PointSet, d2: &PointSet, dirs: &DirectionSet) -> Result<()> {
    check_pair(d1, d2)?;
    if dirs.dim() != d1.dim() {
        return Err(invalid(format!(
            "direction dimension {} does not match point dimension {}",
            dirs.dim(),
            d1.dim()
        )));
    }
    Ok(())
}

fn slice_distance(d1: &PointSet, d2: &PointSet, theta: &[f64]) -> f64 {
    let mut a = project_unchecked(d1, theta);
    let mut b = project_unchecked(d2, theta);
    sorted_cost(&mut a, &mut b)
}

/// Sliced Wasserstein distance: mean 1D distance over the given directions.
///
/// With the `parallel` feature the slices are evaluated on the rayon pool;
/// the mean is always accumulated in direction order, so the result is
/// bit-identical to [`sliced_wasserstein_sequential`].
pub fn sliced_wasserstein(d1: &PointSet, d2: &PointSet, dirs: &DirectionSet) -> Result<f64> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        check_sliced(d1, d2, dirs)?;
        let per_slice: Vec<f64> = dirs
            .data
            .par_chunks_exact(dirs.dim)
            .with_min_len(16)
            .map(|theta| slice_distance(d1, d2, theta))
            .collect();
        Ok(per_slice.iter().sum::<f64>() / per_slice.len() as f64)
    }
    #[cfg(not(feature = "parallel"))]
    {
        sliced_wasserstein_sequential(d1, d2, dirs)
    }
}

/// Single-threaded sliced Wasserstein distance.
pub fn sliced_wasserstein_sequential(
    d1: &PointSet,
    d2: &PointSet,
    dirs: &DirectionSet,
) -> Result<f64> {
    check_sliced(d1, d2, dirs)?;
    let mut sum = 0.0;
    for theta in dirs.iter() {
        sum += slice_distance(d1, d2, theta);
    }
    Ok(sum / dirs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gaussian_set(rng: &mut ChaCha8Rng, n: usize, dim: usize, shift: f64) -> PointSet {
        let data: Vec<f64> = (0..n * dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) + shift)
            .collect();
        PointSet::from_flat(data, dim).unwrap()
    }

    #[test]
    fn one_dimensional_directions_are_signs() {
        let dirs = sample_unit_directions(1, 3, 11).unwrap();
        for d in dirs.iter() {
            assert_eq!(d[0].abs(), 1.0);
        }
    }

    #[test]
    fn directions_are_unit_norm() {
        let dirs = sample_unit_directions(2, 1000, 7).unwrap();
        for d in dirs.iter() {
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn directions_are_centered() {
        let dirs = sample_unit_directions(3, 2000, 7).unwrap();
        let mut mean = [0.0; 3];
        for d in dirs.iter() {
            for k in 0..3 {
                mean[k] += d[k] / 2000.0;
            }
        }
        assert!(mean.iter().all(|m| m.abs() < 0.05), "{mean:?}");
    }

    #[test]
    fn direction_sampling_rejects_zero_sizes() {
        assert!(matches!(
            sample_unit_directions(0, 3, 1),
            Err(Error::InvalidArgument(_))
        ));
        assert!(sample_unit_directions(2, 0, 1).is_err());
    }

    #[test]
    fn direction_sampling_is_seeded() {
        assert_eq!(
            sample_unit_directions(4, 10, 3).unwrap(),
            sample_unit_directions(4, 10, 3).unwrap()
        );
        assert_ne!(
            sample_unit_directions(4, 10, 3).unwrap(),
            sample_unit_directions(4, 10, 4).unwrap()
        );
    }

    #[test]
    fn projection_examples() {
        let ps = PointSet::new(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(project(&ps, &[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);

        let ps = PointSet::new(&[vec![2.0, 2.0]]).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let out = project(&ps, &[s, s]).unwrap();
        assert!((out[0] - 2.0 * 2f64.sqrt()).abs() < 1e-12);

        let ps = PointSet::new(&[vec![0.3, -1.2], vec![4.0, 0.5]]).unwrap();
        let pos = project(&ps, &[0.6, 0.8]).unwrap();
        let neg = project(&ps, &[-0.6, -0.8]).unwrap();
        for (p, n) in pos.iter().zip(&neg) {
            assert_eq!(*p, -*n);
        }
        assert!(project(&ps, &[1.0]).is_err());
    }

    #[test]
    fn one_dimensional_examples() {
        assert_eq!(wasserstein_1d(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(wasserstein_1d(&[0.0], &[2.0]).unwrap(), 2.0);
        let v = wasserstein_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-12);
        assert!(wasserstein_1d(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn exact_examples() {
        let a = PointSet::new(&[vec![0.0, 0.0]]).unwrap();
        let b = PointSet::new(&[vec![3.0, 4.0]]).unwrap();
        assert!((wasserstein_exact(&a, &b).unwrap() - 5.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = gaussian_set(&mut rng, 6, 3, 0.0);
        assert_eq!(wasserstein_exact(&d, &d).unwrap(), 0.0);

        let big = gaussian_set(&mut rng, 9, 1, 0.0);
        assert!(matches!(
            wasserstein_exact(&big, &big),
            Err(Error::SizeLimit { n: 9, max: 8 })
        ));
        let other_dim = gaussian_set(&mut rng, 6, 2, 0.0);
        assert!(matches!(
            wasserstein_exact(&d, &other_dim),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn exact_matches_sorting_on_random_scalars() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let a: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let exact = wasserstein_exact(
                &PointSet::from_scalars(&a).unwrap(),
                &PointSet::from_scalars(&b).unwrap(),
            )
            .unwrap();
            let sorted = wasserstein_1d(&a, &b).unwrap();
            assert!((exact - sorted).abs() < 1e-9);
        }
    }

    #[test]
    fn sliced_identity_and_axis_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d1 = gaussian_set(&mut rng, 20, 3, 0.0);
        let d2 = gaussian_set(&mut rng, 20, 3, 0.5);
        let dirs = sample_unit_directions(3, 64, 5).unwrap();
        assert_eq!(sliced_wasserstein(&d1, &d1, &dirs).unwrap(), 0.0);

        let axis = DirectionSet::from_vectors(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let first = |ps: &PointSet| ps.points().map(|p| p[0]).collect::<Vec<_>>();
        let expected = wasserstein_1d(&first(&d1), &first(&d2)).unwrap();
        assert_eq!(sliced_wasserstein(&d1, &d2, &axis).unwrap(), expected);

        let wrong = sample_unit_directions(2, 4, 5).unwrap();
        assert!(sliced_wasserstein(&d1, &d2, &wrong).is_err());
    }

    #[test]
    fn sliced_matches_dense_angular_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let d1 = gaussian_set(&mut rng, 64, 2, 0.0);
        let d2 = gaussian_set(&mut rng, 64, 2, 0.7);
        let dirs = sample_unit_directions(2, 500, 17).unwrap();
        let mc = sliced_wasserstein(&d1, &d2, &dirs).unwrap();

        // independent route: evenly spaced angles, no shared slicing code
        let quad: f64 = (0..1000)
            .map(|k| {
                let ang = 2.0 * std::f64::consts::PI * k as f64 / 1000.0;
                let (s, c) = ang.sin_cos();
                let mut a: Vec<f64> = d1.points().map(|p| p[0] * c + p[1] * s).collect();
                let mut b: Vec<f64> = d2.points().map(|p| p[0] * c + p[1] * s).collect();
                a.sort_by(|x, y| x.partial_cmp(y).unwrap());
                b.sort_by(|x, y| x.partial_cmp(y).unwrap());
                a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / 1000.0;
        assert!((mc - quad).abs() / quad <= 0.02, "mc={mc} quad={quad}");
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d1 = gaussian_set(&mut rng, 60, 10, 0.0);
        let d2 = gaussian_set(&mut rng, 60, 10, 0.2);
        let dirs = sample_unit_directions(10, 128, 1).unwrap();
        assert_eq!(
            sliced_wasserstein(&d1, &d2, &dirs).unwrap().to_bits(),
            sliced_wasserstein_sequential(&d1, &d2, &dirs).unwrap().to_bits()
        );
    }

    proptest! {
        #[test]
        fn sorting_is_optimal(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..=7)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let exact = wasserstein_exact(
                &PointSet::from_scalars(&a).unwrap(),
                &PointSet::from_scalars(&b).unwrap(),
            ).unwrap();
            prop_assert!((wasserstein_1d(&a, &b).unwrap() - exact).abs() < 1e-9);
        }

        #[test]
        fn one_dimensional_symmetry_and_shift(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..40),
            c in -5.0f64..5.0,
        ) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert_eq!(wasserstein_1d(&a, &b).unwrap(), wasserstein_1d(&b, &a).unwrap());
            prop_assert_eq!(wasserstein_1d(&a, &a).unwrap(), 0.0);
            let shifted: Vec<f64> = a.iter().map(|x| x + c).collect();
            let expected = (a.len() as f64).sqrt() * c.abs();
            prop_assert!((wasserstein_1d(&a, &shifted).unwrap() - expected).abs() < 1e-9 * (1.0 + expected));
        }

        #[test]
        fn sliced_is_symmetric(seed in 0u64..1000, n in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d1 = gaussian_set(&mut rng, n, 4, 0.0);
            let d2 = gaussian_set(&mut rng, n, 4, 1.0);
            let dirs = sample_unit_directions(4, 32, seed).unwrap();
            prop_assert_eq!(
                sliced_wasserstein(&d1, &d2, &dirs).unwrap(),
                sliced_wasserstein(&d2, &d1, &dirs).unwrap()
            );
        }
    }
}
