//! Exact t-SNE and silhouette-based cluster summaries of the embedding space.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const EXAGGERATION_ITERS: usize = 250;
const SEARCH_STEPS: usize = 50;
const ENTROPY_TOL: f64 = 1e-5;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            exaggeration: 12.0,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 10 {
            return Err(Error::usage(format!(
                "t-SNE needs at least 10 points, got {n}"
            )));
        }
        if !(self.perplexity >= 1.0 && self.perplexity < n as f64 / 3.0) {
            return Err(Error::config(format!(
                "perplexity {} must lie in [1, N/3) for N = {n}",
                self.perplexity
            )));
        }
        if self.iterations < EXAGGERATION_ITERS {
            return Err(Error::config(format!(
                "iterations must be >= {EXAGGERATION_ITERS}"
            )));
        }
        if !(self.learning_rate > 0.0 && self.exaggeration >= 1.0) {
            return Err(Error::config(
                "learning rate must be positive and exaggeration >= 1",
            ));
        }
        Ok(())
    }
}

/// Result of the per-point bandwidth search.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub sigma: f64,
    /// Conditional probabilities over the neighbours, in input order.
    pub probs: Vec<f64>,
    pub entropy_bits: f64,
    pub converged: bool,
}

fn conditional(sq_dists: &[f64], beta: f64, probs: &mut [f64]) -> f64 {
    let min = sq_dists.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (p, &d) in probs.iter_mut().zip(sq_dists) {
        *p = (-(d - min) * beta).exp();
        sum += *p;
    }
    let mut h = 0.0;
    for p in probs.iter_mut() {
        *p /= sum;
        if *p > 0.0 {
            h -= *p * p.log2();
        }
    }
    h
}

/// Binary search for the Gaussian bandwidth whose conditional distribution over
/// `sq_dists` (squared distances to every other point) has the target perplexity.
pub fn calibrate(sq_dists: &[f64], perplexity: f64) -> Result<Calibration> {
    if sq_dists.is_empty() {
        return Err(Error::usage("calibration needs at least two points"));
    }
    let target = perplexity.log2();
    let mut probs = vec![0.0; sq_dists.len()];
    let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
    let mut best = (f64::INFINITY, beta);
    for _ in 0..SEARCH_STEPS {
        let h = conditional(sq_dists, beta, &mut probs);
        let err = h - target;
        if err.abs() < best.0 {
            best = (err.abs(), beta);
        }
        if err.abs() < ENTROPY_TOL {
            break;
        }
        if err > 0.0 {
            lo = beta;
            beta = if hi.is_finite() {
                (beta + hi) / 2.0
            } else {
                beta * 2.0
            };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
    }
    let beta = best.1;
    let entropy_bits = conditional(sq_dists, beta, &mut probs);
    Ok(Calibration {
        sigma: (1.0 / (2.0 * beta)).sqrt(),
        probs,
        entropy_bits,
        converged: best.0 < ENTROPY_TOL,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetrized joint affinities, row-major `N x N`, plus the number of rows whose search did not converge.
pub fn joint_probabilities(points: &[Vec<f64>], perplexity: f64) -> Result<(Vec<f64>, usize)> {
    let n = points.len();
    let mut cond = vec![0.0; n * n];
    let mut unconverged = 0;
    let mut row = Vec::with_capacity(n);
    for i in 0..n {
        row.clear();
        row.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| sq_dist(&points[i], &points[j])),
        );
        let cal = calibrate(&row, perplexity)?;
        unconverged += usize::from(!cal.converged);
        for (k, j) in (0..n).filter(|&j| j != i).enumerate() {
            cond[i * n + j] = cal.probs[k];
        }
    }
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    Ok((p, unconverged))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// One `[x, y]` per input point, in input order.
    pub coords: Vec<[f64; 2]>,
    /// KL(P || Q) after each iteration, measured against the unexaggerated P.
    pub kl: Vec<f64>,
    pub unconverged_rows: usize,
}

/// Points are processed in a canonical (lexicographic) order so the result does
/// not depend on the order they are supplied in.
pub fn tsne(points: &[Vec<f64>], config: &TsneConfig) -> Result<Embedding> {
    let n = points.len();
    config.validate(n)?;
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::usage("t-SNE inputs must share one dimension"));
    }
    if points.iter().all(|p| p == &points[0]) {
        return Err(Error::usage("t-SNE inputs are all identical"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| points[i].clone()).collect();
    let (p, unconverged_rows) = joint_probabilities(&sorted, config.perplexity)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, 1e-2).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];
    let mut kl = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let exaggerating = iter < EXAGGERATION_ITERS;
        let exag = if exaggerating {
            config.exaggeration
        } else {
            1.0
        };
        let momentum = if exaggerating { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[2 * i] - y[2 * j];
                let dy = y[2 * i + 1] - y[2 * j + 1];
                let q = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        grad.fill(0.0);
        let mut divergence = 0.0;
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let pij = p[i * n + j];
                let q = num[i * n + j];
                let m = (exag * pij - q / z) * q;
                gx += m * (y[2 * i] - y[2 * j]);
                gy += m * (y[2 * i + 1] - y[2 * j + 1]);
                if pij > 0.0 {
                    divergence += pij * (pij / (q / z).max(f64::MIN_POSITIVE)).ln();
                }
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }
        kl.push(divergence);
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (velocity[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            velocity[k] = momentum * velocity[k] - config.learning_rate * gains[k] * grad[k];
            y[k] += velocity[k];
        }
        for axis in 0..2 {
            let mean = (0..n).map(|i| y[2 * i + axis]).sum::<f64>() / n as f64;
            for i in 0..n {
                y[2 * i + axis] -= mean;
            }
        }
    }
    let mut coords = vec![[0.0; 2]; n];
    for (k, &i) in order.iter().enumerate() {
        coords[i] = [y[2 * k], y[2 * k + 1]];
    }
    Ok(Embedding {
        coords,
        kl,
        unconverged_rows,
    })
}

/// Up to `per_class` indices of each label, drawn without replacement; output is grouped by label.
pub fn stratified_sample(labels: &[usize], per_class: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut out = Vec::new();
    for c in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        idx.truncate(per_class);
        idx.sort_unstable();
        out.extend(idx);
    }
    out
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Silhouette of every point; `None` when fewer than two classes are present.
pub fn silhouettes(coords: &[[f64; 2]], labels: &[usize]) -> Option<Vec<f64>> {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return None;
    }
    let slot = |l: usize| classes.binary_search(&l).expect("known class");
    let sizes: Vec<usize> = classes
        .iter()
        .map(|&c| labels.iter().filter(|&&l| l == c).count())
        .collect();
    let mut out = Vec::with_capacity(coords.len());
    let mut sums = vec![0.0; classes.len()];
    for (i, &ci) in coords.iter().enumerate() {
        sums.fill(0.0);
        for (j, &cj) in coords.iter().enumerate() {
            if i != j {
                sums[slot(labels[j])] += dist2(ci, cj);
            }
        }
        let own = slot(labels[i]);
        if sizes[own] < 2 {
            out.push(0.0);
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..classes.len())
            .filter(|&k| k != own)
            .map(|k| sums[k] / sizes[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        out.push(if m > 0.0 { (b - a) / m } else { 0.0 });
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandMatch {
    pub label: usize,
    pub nearest: usize,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    /// Mean silhouette per class, ascending by label; `None` with a single class.
    pub per_class: Vec<(usize, Option<f64>)>,
    pub commands: Vec<CommandMatch>,
}

impl ClusterReport {
    /// Mean of the per-class silhouettes.
    pub fn mean_silhouette(&self) -> Option<f64> {
        let vals: Vec<f64> = self.per_class.iter().filter_map(|(_, s)| *s).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn matched(&self) -> usize {
        self.commands.iter().filter(|c| c.matched).count()
    }

    pub fn to_text(&self, names: impl Fn(usize) -> String) -> String {
        let mut out = String::new();
        for (label, s) in &self.per_class {
            match s {
                Some(s) => writeln!(out, "silhouette {} {s:.4}", names(*label)),
                None => writeln!(out, "silhouette {} n/a", names(*label)),
            }
            .expect("write to string");
        }
        match self.mean_silhouette() {
            Some(m) => writeln!(out, "mean_silhouette {m:.4}"),
            None => writeln!(out, "mean_silhouette n/a"),
        }
        .expect("write to string");
        for c in &self.commands {
            writeln!(
                out,
                "command {} nearest {} {}",
                names(c.label),
                names(c.nearest),
                if c.matched { "match" } else { "mismatch" }
            )
            .expect("write to string");
        }
        writeln!(
            out,
            "commands_matched {}/{}",
            self.matched(),
            self.commands.len()
        )
        .expect("write to string");
        out
    }
}

/// Per-class silhouettes of `coords` and, for each `(label, point)` command, the nearest class centroid.
pub fn cluster_report(
    coords: &[[f64; 2]],
    labels: &[usize],
    commands: &[(usize, [f64; 2])],
) -> ClusterReport {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let sil = silhouettes(coords, labels);
    let per_class = classes
        .iter()
        .map(|&c| {
            let s = sil.as_ref().map(|s| {
                let v: Vec<f64> = s
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(v, _)| *v)
                    .collect();
                v.iter().sum::<f64>() / v.len() as f64
            });
            (c, s)
        })
        .collect();
    let centroids: Vec<(usize, [f64; 2])> = classes
        .iter()
        .map(|&c| {
            let pts: Vec<[f64; 2]> = coords
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| *p)
                .collect();
            let k = pts.len() as f64;
            (
                c,
                [
                    pts.iter().map(|p| p[0]).sum::<f64>() / k,
                    pts.iter().map(|p| p[1]).sum::<f64>() / k,
                ],
            )
        })
        .collect();
    let commands = commands
        .iter()
        .map(|&(label, pt)| {
            let nearest = centroids
                .iter()
                .min_by(|a, b| dist2(a.1, pt).total_cmp(&dist2(b.1, pt)))
                .map(|c| c.0)
                .unwrap_or(label);
            CommandMatch {
                label,
                nearest,
                matched: nearest == label,
            }
        })
        .collect();
    ClusterReport {
        per_class,
        commands,
    }
}

/// `x,y,label,kind` rows.
pub fn coords_csv(
    coords: &[[f64; 2]],
    labels: &[usize],
    kinds: &[&str],
    names: impl Fn(usize) -> String,
) -> String {
    let mut out = String::from("x,y,label,kind\n");
    for ((c, &l), k) in coords.iter().zip(labels).zip(kinds) {
        writeln!(out, "{},{},{},{}", c[0], c[1], names(l), k).expect("write to string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn blobs(per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for c in 0..2 {
            for _ in 0..per {
                let off = if c == 0 { -10.0 } else { 10.0 };
                pts.push((0..8).map(|_| off + noise.sample(&mut rng)).collect());
                labels.push(c);
            }
        }
        (pts, labels)
    }

    #[test]
    fn equidistant_points_are_uniform() {
        let cal = calibrate(&[4.0; 6], 6.0).unwrap();
        assert!(cal.converged);
        assert!((cal.entropy_bits - 6f64.log2()).abs() < 1e-12);
        assert!(cal.probs.iter().all(|&p| (p - 1.0 / 6.0).abs() < 1e-12));
    }

    #[test]
    fn perplexity_two_gives_one_bit() {
        let cal = calibrate(&[1.0, 3.0], 2.0).unwrap();
        assert!(cal.converged);
        assert!((cal.entropy_bits - 1.0).abs() < 1e-5);
    }

    #[test]
    fn duplicate_point_dominates() {
        let cal = calibrate(&[0.0, 5.0, 7.0, 9.0], 1.01).unwrap();
        assert!(cal.probs[0] > 0.99, "{:?}", cal.probs);
    }

    proptest! {
        #[test]
        fn calibrated_entropy_hits_target(d in proptest::collection::vec(0.01f64..50.0, 8..40), frac in 0.1f64..0.9) {
            let perp = 1.0 + frac * (d.len() as f64 - 1.0);
            let cal = calibrate(&d, perp).unwrap();
            prop_assert!(cal.converged);
            prop_assert!((cal.entropy_bits - perp.log2()).abs() < 1e-5);
            prop_assert!((cal.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn joint_probabilities_are_symmetric_normalized(seed in 0u64..500) {
            let (pts, _) = blobs(8, seed);
            let (p, _) = joint_probabilities(&pts, 4.0).unwrap();
            let n = pts.len();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for i in 0..n {
                prop_assert_eq!(p[i * n + i], 0.0);
                for j in 0..n {
                    prop_assert!(p[i * n + j] >= 0.0);
                    prop_assert!((p[i * n + j] - p[j * n + i]).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn separated_blobs_stay_separated() {
        for seed in 0..5 {
            let (pts, labels) = blobs(100, seed);
            let emb = tsne(
                &pts,
                &TsneConfig {
                    seed,
                    ..TsneConfig::default()
                },
            )
            .unwrap();
            let report = cluster_report(&emb.coords, &labels, &[]);
            assert!(report.mean_silhouette().unwrap() > 0.5, "{report:?}");
            let tail = &emb.kl[emb.kl.len() - 100..];
            for w in tail.windows(2) {
                assert!(w[1] <= w[0] + 1e-4, "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn permutation_equivariant() {
        let (pts, _) = blobs(10, 5);
        let cfg = TsneConfig {
            perplexity: 5.0,
            iterations: 300,
            ..TsneConfig::default()
        };
        let a = tsne(&pts, &cfg).unwrap();
        let perm: Vec<usize> = (0..pts.len()).rev().collect();
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| pts[i].clone()).collect();
        let b = tsne(&shuffled, &cfg).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(a.coords[i], b.coords[k]);
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let same = vec![vec![1.0, 2.0]; 12];
        assert_eq!(
            tsne(
                &same,
                &TsneConfig {
                    perplexity: 3.0,
                    ..TsneConfig::default()
                }
            )
            .unwrap_err()
            .category(),
            "usage"
        );
        let few = vec![vec![1.0]; 5];
        assert!(tsne(&few, &TsneConfig::default()).is_err());
        let (pts, _) = blobs(10, 0);
        assert_eq!(
            tsne(&pts, &TsneConfig::default()).unwrap_err().category(),
            "config"
        );
    }

    #[test]
    fn separated_classes_match_their_commands() {
        let mut coords = Vec::new();
        let mut labels = Vec::new();
        for c in 0..5 {
            for k in 0..10 {
                coords.push([c as f64 * 100.0 + k as f64 * 0.1, 0.0]);
                labels.push(c);
            }
        }
        let commands: Vec<(usize, [f64; 2])> =
            (0..5).map(|c| (c, [c as f64 * 100.0, 1.0])).collect();
        let r = cluster_report(&coords, &labels, &commands);
        assert_eq!(r.matched(), 5);
        assert!(r.mean_silhouette().unwrap() > 0.9);
    }

    #[test]
    fn single_class_silhouette_not_applicable() {
        let coords = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let r = cluster_report(&coords, &[2, 2, 2], &[(2, [0.0, 0.0])]);
        assert_eq!(r.per_class, vec![(2, None)]);
        assert_eq!(r.mean_silhouette(), None);
        assert!(r.to_text(|l| l.to_string()).contains("n/a"));
    }

    #[test]
    fn silhouette_oracle() {
        let coords = vec![[0.0, 0.0], [1.0, 0.0], [5.0, 0.0], [6.0, 0.0]];
        let s = silhouettes(&coords, &[0, 0, 1, 1]).unwrap();
        // point 0: a = 1, b = (5 + 6) / 2
        assert!((s[0] - (5.5 - 1.0) / 5.5).abs() < 1e-12);
    }

    #[test]
    fn stratified_sample_caps_each_class() {
        let labels = [0, 1, 0, 1, 1, 2, 0, 0];
        let idx = stratified_sample(&labels, 2, 4);
        let count = |c| idx.iter().filter(|&&i| labels[i] == c).count();
        assert_eq!((count(0), count(1), count(2)), (2, 2, 1));
        assert_eq!(idx, stratified_sample(&labels, 2, 4));
    }
}
