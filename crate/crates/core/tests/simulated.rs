//! Simulator-generated instances checked against direct recomputation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use gcpo_core::clustering::cluster_by_labels;
use gcpo_core::diagnostics::{heldout_regression, paired_bootstrap_delta};
use gcpo_core::modulation::{alpha_for_group, grpo_advantages, rd_weight};
use gcpo_core::seed::rng_for;
use gcpo_core::simulator::{
    anisotropic_experiment, calibration_experiment, generate_groups, toy_training, AnisotropicSpec,
    CalibrationSpec, Directions, Method, RewardModel, SimConfig, TrainConfig,
};
use gcpo_core::uncertainty::{cosine_dispersion, reward_dispersion, semantic_entropy};

const ANISOTROPIC: &str = include_str!("../../../configs/anisotropic.json");
const CALIBRATION: &str = include_str!("../../../configs/calibration.json");

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Spearman rho from mid-ranks and the Pearson formula.
fn oracle_rho(u: &[f64], v: &[f64]) -> Option<f64> {
    let rank = |x: &[f64]| -> Vec<f64> {
        let mut sorted: Vec<(f64, usize)> = x.iter().copied().zip(0..).collect();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < sorted.len() {
            let j = (i..sorted.len())
                .take_while(|&j| sorted[j].0 == sorted[i].0)
                .last()
                .unwrap();
            for t in i..=j {
                r[sorted[t].1] = (i + j) as f64 / 2.0 + 1.0;
            }
            i = j + 1;
        }
        r
    };
    let (ru, rv) = (rank(u), rank(v));
    let n = u.len() as f64;
    let (mu, mv) = (ru.iter().sum::<f64>() / n, rv.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in ru.iter().zip(&rv) {
        sxy += (a - mu) * (b - mv);
        sxx += (a - mu) * (a - mu);
        syy += (b - mv) * (b - mv);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

fn oracle_quantile(mut xs: Vec<f64>, q: f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = q * (xs.len() - 1) as f64;
    let i = h.floor() as usize;
    if i + 1 >= xs.len() {
        return xs[i];
    }
    xs[i] + (h - i as f64) * (xs[i + 1] - xs[i])
}

/// Replays the documented resampling scheme: replicate `b` draws `n` indices
/// uniformly from `rng_for(seed, [b])`.
fn oracle_ci(u_a: &[f64], u_b: &[f64], v: &[f64], replicates: usize, seed: u64) -> (f64, f64) {
    let n = v.len();
    let mut deltas = Vec::new();
    for b in 0..replicates {
        let mut rng = rng_for(seed, &[b as u64]);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let pick = |x: &[f64]| idx.iter().map(|&i| x[i]).collect::<Vec<_>>();
        let vb = pick(v);
        if let (Some(a), Some(c)) = (oracle_rho(&pick(u_a), &vb), oracle_rho(&pick(u_b), &vb)) {
            deltas.push(a - c);
        }
    }
    (
        oracle_quantile(deltas.clone(), 0.025),
        oracle_quantile(deltas, 0.975),
    )
}

#[test]
fn bootstrap_separates_strong_from_weak_measure() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let v = normals(&mut rng, 200);
    let (na, nb) = (normals(&mut rng, 200), normals(&mut rng, 200));
    let u_a: Vec<f64> = v.iter().zip(&na).map(|(x, e)| x + 0.75 * e).collect();
    let u_b: Vec<f64> = v.iter().zip(&nb).map(|(x, e)| x + 3.0 * e).collect();
    let rho_a = oracle_rho(&u_a, &v).unwrap();
    let rho_b = oracle_rho(&u_b, &v).unwrap();
    assert!((rho_a - 0.8).abs() < 0.1, "rho_a {rho_a}");
    assert!((rho_b - 0.3).abs() < 0.1, "rho_b {rho_b}");

    let ci = paired_bootstrap_delta(&u_a, &u_b, &v, 1000, 42).unwrap();
    assert!(ci.lower > 0.0);
    assert!((ci.observed - (rho_a - rho_b)).abs() < 1e-12);
    let (lo, hi) = oracle_ci(&u_a, &u_b, &v, 1000, 42);
    assert!((ci.lower - lo).abs() < 1e-12 && (ci.upper - hi).abs() < 1e-12);
}

#[test]
fn heldout_null_instance() {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let u = normals(&mut rng, 500);
    let v = normals(&mut rng, 500);
    let out = heldout_regression(&u, &v, 5, 42).unwrap();
    assert!(out.rho_mean.unwrap().abs() < 0.2);
}

#[test]
fn heldout_outlier_residual() {
    let n = 50;
    let u: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mut v: Vec<f64> = u.iter().map(|x| 2.0 * x + 1.0).collect();
    let (at, size) = (17, 40.0);
    v[at] += size;
    let out = heldout_regression(&u, &v, 5, 42).unwrap();
    let home = gcpo_core::diagnostics::fold_indices(n, 5, 42)
        .iter()
        .position(|f| f.contains(&at))
        .unwrap();
    // The home fold trains on exact data, so its only residual is the outlier.
    let fold = &out.folds[home];
    assert!((fold.mae.unwrap() - size / fold.n_test as f64).abs() < 1e-9);
    for f in &out.folds {
        assert!(
            f.mae.unwrap() <= size / f.n_test as f64 + 1e-9,
            "fold {}",
            f.fold
        );
    }
}

#[test]
fn two_orthogonal_modes_average_half_dispersion() {
    let config = SimConfig {
        group_size: 64,
        embedding_dim: 4,
        grad_dim: 4,
        modes: 2,
        directions: Directions::Angle { degrees: 90.0 },
        masses: vec![0.5, 0.5],
        intra_noise: 0.0,
        grad_scale: 1.0,
        grad_noise: 0.0,
        rewards: RewardModel {
            cluster_means: vec![1.0, 0.0],
            noise: 0.0,
            range: [0.0, 1.0],
        },
        seed: 9,
        num_queries: 400,
        dirichlet_concentration: None,
    };
    let data = generate_groups(&config).unwrap();
    let mc: f64 = data
        .queries
        .iter()
        .map(|q| cosine_dispersion(&q.group))
        .sum::<f64>()
        / data.queries.len() as f64;
    // Each group's CD is 2 p (1 - p) for its empirical share p, whose mean is
    // 0.5 (1 - 1/G).
    assert!((mc - 0.5 * (1.0 - 1.0 / 64.0)).abs() < 0.005, "{mc}");
}

#[test]
fn shipped_anisotropic_config_separates_regimes() {
    let spec: AnisotropicSpec = serde_json::from_str(ANISOTROPIC).unwrap();
    let out = anisotropic_experiment(
        &spec.near,
        &spec.far,
        spec.queries,
        spec.seed,
        &spec.analysis,
    )
    .unwrap();
    assert_eq!(out.rows.len(), spec.queries);
    assert!(out.summary.se_max_abs_diff < 1e-9);
    for pair in out.rows.chunks(2) {
        let (near, far) = (&pair[0], &pair[1]);
        assert_eq!(near.se, far.se);
        if near.se > 0.0 {
            assert!(far.cd > near.cd, "{}", near.query_id);
        }
    }
    let pick = |f: fn(&gcpo_core::simulator::AnisotropicRow) -> f64| {
        out.rows.iter().map(f).collect::<Vec<_>>()
    };
    let (se, cd, bot, v) = (
        pick(|r| r.se),
        pick(|r| r.cd),
        pick(|r| r.bot),
        pick(|r| r.v),
    );
    for (name, u) in [("cd", &cd), ("bot", &bot)] {
        let d = out.report.delta(name, "se").unwrap();
        assert!(d.ci.lower > 0.0, "{name}");
        let (lo, hi) = oracle_ci(u, &se, &v, spec.analysis.bootstrap, spec.seed);
        assert!((d.ci.lower - lo).abs() < 1e-12 && (d.ci.upper - hi).abs() < 1e-12);
    }
}

#[test]
fn shipped_calibration_config_matches_direct_recomputation() {
    let spec: CalibrationSpec = serde_json::from_str(CALIBRATION).unwrap();
    let out = calibration_experiment(
        &spec.sim,
        spec.queries,
        spec.filter_fraction,
        spec.seed,
        spec.alpha_base,
        spec.epsilon,
    )
    .unwrap();

    let mut config = spec.sim.clone();
    config.seed = spec.seed;
    config.num_queries = spec.queries;
    let data = generate_groups(&config).unwrap();
    let alpha_g = alpha_for_group(spec.alpha_base, config.group_size as f64).unwrap();
    let update = |grads: &[Vec<f64>], adv: &[f64]| {
        let mut total = vec![0.0; grads[0].len()];
        for (g, a) in grads.iter().zip(adv) {
            for (t, x) in total.iter_mut().zip(g) {
                *t += a * x / adv.len() as f64;
            }
        }
        total.iter().map(|x| x * x).sum::<f64>().sqrt()
    };
    let per_query: Vec<(f64, f64, f64)> = data
        .queries
        .iter()
        .map(|q| {
            let se = semantic_entropy(&cluster_by_labels(&q.group, &q.labels).unwrap());
            let adv = grpo_advantages(q.group.rewards(), spec.epsilon);
            let (_, rd) = reward_dispersion(q.group.rewards(), &data.manifest);
            let w = rd_weight(rd, alpha_g).unwrap();
            let grads = q.group.grads().unwrap();
            let modulated: Vec<f64> = adv.iter().map(|a| a * w).collect();
            (se, update(grads, &adv), update(grads, &modulated))
        })
        .collect();
    let n = per_query.len() as f64;
    let unfiltered = per_query.iter().map(|r| r.1).sum::<f64>() / n;
    let rd_arm = per_query.iter().map(|r| r.2).sum::<f64>() / n;
    // Stable sort keeps lower indices first among equal SE values.
    let mut order: Vec<usize> = (0..per_query.len()).collect();
    order.sort_by(|&a, &b| per_query[b].0.partial_cmp(&per_query[a].0).unwrap());
    let removed = (spec.filter_fraction * n).round() as usize;
    let kept: Vec<usize> = order[removed..].to_vec();
    let filtered = kept.iter().map(|&i| per_query[i].1).sum::<f64>() / kept.len() as f64;

    let s = &out.summary;
    assert_eq!(s.removed, removed);
    assert!((s.unfiltered.mean_update_norm - unfiltered).abs() < 1e-12);
    assert!((s.rd_modulated.mean_update_norm - rd_arm).abs() < 1e-12);
    assert!((s.filtered.mean_update_norm - filtered).abs() < 1e-12);
    assert!(s.ratio_to_unfiltered.unwrap() < 1.0);
    assert!(s.ratio.unwrap() < 0.9);
}

#[test]
fn default_toy_task_is_not_less_stable_under_modulation() {
    let base = TrainConfig::default();
    let gcpo = toy_training(&base).unwrap();
    let grpo = toy_training(&TrainConfig {
        method: Method::Grpo,
        ..base
    })
    .unwrap();
    assert_eq!(gcpo.trajectories.len(), 10);
    assert!(gcpo.final_reward_std <= grpo.final_reward_std);
}
