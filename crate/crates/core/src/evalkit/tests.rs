use approx::assert_relative_eq;
use proptest::prelude::*;

use super::*;
use crate::dataio::SyntheticSpec;
use crate::model::{self, Dims, HeadKind, LatentState, ModelParams, NoiseScales};
use crate::numkit::{Mat, SeededRng};
use crate::smc::{self, Generation, ParticleCloud};

fn params(lag: usize, seed: u64, noise: NoiseScales) -> ModelParams {
    let dims = Dims {
        d_in: 1,
        depth: 4,
        d_ff: 5,
        d_obs: 1,
        lag,
    };
    let mut p = ModelParams::init(dims, &mut SeededRng::new(seed)).unwrap();
    p.noise = noise;
    p
}

fn series(len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = SeededRng::new(seed);
    (0..len).map(|_| vec![rng.normal()]).collect()
}

fn constant_samples(steps: usize, n: usize, v: f64) -> PredictiveSamples {
    PredictiveSamples {
        steps: vec![vec![vec![v]; n]; steps],
    }
}

#[test]
fn predictive_collapses_without_noise() {
    let p = params(2, 1, NoiseScales::uniform(0.0));
    let xs = series(2, 2);
    let mut cloud = ParticleCloud::new(1, 2).unwrap();
    cloud.initialize(&xs[0], &p, &SeededRng::new(3)).unwrap();
    let draws = sample_predictive(&cloud, &p, 50, &mut SeededRng::new(4)).unwrap();
    let det = model::deterministic_forward(&xs, &p).unwrap();
    assert!(draws.iter().all(|d| d == &det[0]));
    assert!(sample_predictive(&cloud, &p, 0, &mut SeededRng::new(4)).is_err());
}

#[test]
fn predictive_uses_selected_particle() {
    let p = params(1, 5, NoiseScales::uniform(0.0));
    let mut rng = SeededRng::new(6);
    let states: Vec<LatentState> = (0..2)
        .map(|_| LatentState::from_parts(model::project_qkv(&[rng.normal()], &p, &mut rng).unwrap(), None))
        .collect();
    let only_second = |s: &LatentState| {
        let pi = model::attention_weights(&s.q, &[s]).unwrap();
        model::observation_mean(&model::cell_attention_mean(&pi, &[s]).unwrap(), &p.head).unwrap()
    };
    let expected = only_second(&states[1]);
    assert_ne!(expected, only_second(&states[0]));
    let cloud = ParticleCloud::from_parts(
        1,
        vec![Generation {
            states,
            ancestors: vec![],
        }],
        vec![0.0, 1.0],
    );
    let draws = sample_predictive(&cloud, &p, 100, &mut SeededRng::new(7)).unwrap();
    assert!(draws.iter().all(|d| d == &expected));
}

#[test]
fn predictive_mean_matches_independent_estimate() {
    let p = params(2, 8, NoiseScales::uniform(0.3));
    let xs = series(5, 9);
    let out = smc::filter_sequence(&xs, &p, 4, &SeededRng::new(10)).unwrap();
    let cloud = &out.cloud;
    let draws = sample_predictive(cloud, &p, 10_000, &mut SeededRng::new(11)).unwrap();
    let vals: Vec<f64> = draws.iter().map(|d| d[0]).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();

    // oracle: per-particle expectation of G(z) by direct simulation
    let mut oracle = 0.0;
    let mut rng = SeededRng::new(12);
    for (m, w) in cloud.weights().iter().enumerate() {
        let window = cloud.window(m);
        let pi = model::attention_weights(&window[0].q, &window).unwrap();
        let k = 25_000;
        let mut acc = 0.0;
        for _ in 0..k {
            let a = model::attention_vector(&pi, &window, &p, &mut rng).unwrap();
            acc += model::observation_mean(&a.z, &p.head).unwrap()[0];
        }
        oracle += w * acc / k as f64;
    }
    assert!(
        (mean - oracle).abs() < 4.0 * sd / n.sqrt(),
        "mean {mean} oracle {oracle}"
    );
}

#[test]
fn one_step_rollout_equals_predictive_draws() {
    let p = params(3, 13, NoiseScales::uniform(0.2));
    let xs = series(6, 14);
    let out = smc::filter_sequence(&xs, &p, 5, &SeededRng::new(15)).unwrap();
    let a = sample_predictive(&out.cloud, &p, 40, &mut SeededRng::new(16)).unwrap();
    let b = multistep_forecast(&out.cloud, &p, 1, 40, &mut SeededRng::new(16)).unwrap();
    assert_eq!(b.steps, vec![a]);
    assert!(multistep_forecast(&out.cloud, &p, 0, 40, &mut SeededRng::new(16)).is_err());
}

#[test]
fn noiseless_rollout_extends_deterministic_forward() {
    let noise = NoiseScales {
        var_obs: 1e-30,
        ..NoiseScales::uniform(0.0)
    };
    let p = params(3, 17, noise);
    let xs = series(4, 18);
    let out = smc::filter_sequence(&xs, &p, 1, &SeededRng::new(19)).unwrap();
    let roll = multistep_forecast(&out.cloud, &p, 5, 3, &mut SeededRng::new(20)).unwrap();
    let mut seq = xs.clone();
    seq.push(vec![0.0]);
    for k in 0..5 {
        let pred = model::deterministic_forward(&seq, &p).unwrap().last().unwrap().clone();
        for draw in &roll.steps[k] {
            assert!((draw[0] - pred[0]).abs() < 1e-9);
        }
        let last = seq.len() - 1;
        seq[last] = pred;
        seq.push(vec![0.0]);
    }
}

#[test]
fn interval_examples() {
    let b = intervals_from_samples(&constant_samples(3, 40, 2.5), 0.95).unwrap();
    assert!(b.lower.iter().chain(&b.upper).all(|v| v == &vec![2.5]));

    let s = PredictiveSamples {
        steps: vec![(1..=100).rev().map(|v| vec![v as f64]).collect()],
    };
    let b = intervals_from_samples(&s, 0.95).unwrap();
    assert!((b.lower[0][0] - 3.0).abs() < 1e-9 && (b.upper[0][0] - 98.0).abs() < 1e-9);

    assert!(intervals_from_samples(&constant_samples(1, 19, 0.0), 0.95).is_err());
    assert!(intervals_from_samples(&constant_samples(1, 20, 0.0), 0.95).is_ok());
    assert!(intervals_from_samples(&constant_samples(1, 20, 0.0), 1.0).is_err());
}

#[test]
fn wider_noise_gives_wider_intervals() {
    let mut rng = SeededRng::new(21);
    let base: Vec<f64> = (0..2000).map(|_| rng.normal()).collect();
    let mut widths = Vec::new();
    for scale in [0.5, 1.0, 2.0] {
        let s = PredictiveSamples {
            steps: vec![base.iter().map(|e| vec![scale * e]).collect()],
        };
        let b = intervals_from_samples(&s, 0.9).unwrap();
        widths.push(b.upper[0][0] - b.lower[0][0]);
    }
    assert!(widths[0] < widths[1] && widths[1] < widths[2]);
}

fn bounds(lo: f64, hi: f64, steps: usize) -> IntervalBounds {
    IntervalBounds {
        lower: vec![vec![lo]; steps],
        upper: vec![vec![hi]; steps],
    }
}

#[test]
fn coverage_examples() {
    let truth = vec![vec![vec![1.0]; 4]; 3];
    let all = vec![bounds(0.0, 2.0, 4); 3];
    let c = picp_mpiw(&all, &truth, 2).unwrap();
    assert_eq!((c.picp, c.mpiw), (1.0, 2.0));
    assert_eq!(c.per_timestep[0], TimestepCoverage { t: 2, picp: 1.0, n: 3 });

    let none = vec![bounds(1.5, 2.0, 4); 3];
    assert_eq!(picp_mpiw(&none, &truth, 2).unwrap().picp, 0.0);

    // closed interval: a truth on the boundary is covered
    let edge = vec![bounds(1.0, 1.0, 4); 3];
    let c = picp_mpiw(&edge, &truth, 2).unwrap();
    assert_eq!((c.picp, c.mpiw), (1.0, 0.0));

    let half_truth = vec![vec![vec![1.0], vec![5.0]]; 2];
    let c = picp_mpiw(&vec![bounds(0.0, 2.0, 2); 2], &half_truth, 1).unwrap();
    assert_eq!(c.picp, 0.5);

    assert!(picp_mpiw(&all[..2], &truth, 2).is_err());
    assert!(picp_mpiw(&vec![bounds(0.0, 2.0, 3); 3], &truth, 2).is_err());
}

#[test]
fn mse_examples() {
    let x = vec![vec![vec![1.0, 2.0]; 3]; 2];
    assert_eq!(mse(&x, &x).unwrap(), 0.0);
    let shifted: Vec<Vec<Vec<f64>>> = x
        .iter()
        .map(|s| s.iter().map(|r| r.iter().map(|v| v + 0.5).collect()).collect())
        .collect();
    assert_eq!(mse(&shifted, &x).unwrap(), 0.25);
    assert!(mse(&x[..1], &x).is_err());
}

fn single_mode(means: &[f64]) -> Vec<Modes> {
    means.iter().map(|m| vec![(1.0, vec![*m])]).collect()
}

#[test]
fn dist_mse_examples() {
    let s = PredictiveSamples {
        steps: vec![vec![vec![0.4]; 10], vec![vec![-1.0]; 10]],
    };
    assert_eq!(dist_mse(&s, &single_mode(&[0.4, -1.0])).unwrap(), 0.0);
    assert_relative_eq!(
        dist_mse(&s, &single_mode(&[0.1, -1.3])).unwrap(),
        0.09,
        max_relative = 1e-12
    );
    assert!(dist_mse(&s, &[vec![], vec![]]).is_err());
    assert!(dist_mse(&s, &single_mode(&[0.0])).is_err());

    let two = vec![vec![(0.7, vec![1.0]), (0.3, vec![0.0])]; 2];
    let ones = constant_samples(2, 5, 1.0);
    assert_relative_eq!(dist_mse(&ones, &two).unwrap(), 0.3, max_relative = 1e-12);
}

#[test]
fn dist_mse_of_true_generator_draws() {
    let spec = SyntheticSpec::model_i(1, 2, 0);
    let mut rng = SeededRng::new(22);
    let mut acc = DistMse::default();
    for _ in 0..100 {
        let x_prev = rng.normal() * 1.2;
        let draws: Vec<Vec<f64>> = (0..1000)
            .map(|_| vec![spec.alpha * x_prev + spec.sigma2.sqrt() * rng.normal()])
            .collect();
        let modes = vec![spec.modes(x_prev).into_iter().map(|(p, m)| (p, vec![m])).collect()];
        acc.add(&PredictiveSamples { steps: vec![draws] }, &modes).unwrap();
    }
    assert!((acc.value().unwrap() - 0.5).abs() < 0.03);
}

#[test]
fn report_csv_layout() {
    let r = MetricsReport {
        mse: 0.5,
        dist_mse: Some(0.25),
        picp: 0.75,
        mpiw: 2.0,
        level: 0.95,
        picp_per_timestep: vec![TimestepCoverage { t: 2, picp: 0.75, n: 4 }],
    };
    let mut a = Vec::new();
    r.write_csv(&mut a).unwrap();
    assert_eq!(
        String::from_utf8(a).unwrap(),
        "metric,value\nmse,0.5\ndist_mse,0.25\npicp,0.75\nmpiw,2\nlevel,0.95\n"
    );
    let mut b = Vec::new();
    r.write_picp_csv(&mut b).unwrap();
    assert_eq!(String::from_utf8(b).unwrap(), "t,picp,n\n2,0.75,4\n");
}

#[test]
fn unistep_points_match_filter_and_are_reproducible() {
    let p = params(2, 23, NoiseScales::uniform(0.4));
    let seqs: Vec<Vec<Vec<f64>>> = (0..3).map(|i| series(6, 30 + i)).collect();
    let ids: Vec<String> = (0..3).map(|i| format!("s{i}")).collect();
    let opts = EvalOptions {
        particles: 4,
        n_samples: 40,
        level: 0.9,
        seed: 5,
    };
    let a = unistep_eval(&seqs, &ids, &p, &opts, None, None).unwrap();
    let b = unistep_eval(&seqs, &ids, &p, &opts, None, None).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.forecasts, b.forecasts);
    assert_eq!(a.report.dist_mse, None);
    let filter_rng = SeededRng::new(5).derive(&[1]).derive(&[0]);
    let out = smc::filter_sequence(&seqs[1], &p, 4, &filter_rng).unwrap();
    assert_eq!(a.forecasts[1].point, out.predictions);
    assert_eq!(a.forecasts[0].samples.n_steps(), 5);

    let mut csv = Vec::new();
    write_samples_csv(&a.forecasts, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "series_id,t,draw_id,f0");
    assert_eq!(text.lines().count(), 1 + 3 * 5 * 40);
    assert!(text.lines().nth(1).unwrap().starts_with("s0,2,0,"));
}

#[test]
fn multistep_checks_lengths() {
    let p = params(2, 24, NoiseScales::uniform(0.4));
    let seqs = vec![series(6, 40)];
    let ids = vec!["a".to_string()];
    let opts = EvalOptions {
        particles: 3,
        n_samples: 20,
        level: 0.9,
        seed: 1,
    };
    let out = multistep_eval(&seqs, &ids, &p, 4, 2, &opts, None).unwrap();
    assert_eq!(out.forecasts[0].first_t, 5);
    assert_eq!(out.report.picp_per_timestep.len(), 2);
    assert!(multistep_eval(&seqs, &ids, &p, 5, 2, &opts, None).is_err());
    assert!(multistep_eval(&seqs, &ids, &p, 0, 2, &opts, None).is_err());
}

#[test]
fn linear_model_forecast_spread_grows_with_horizon() {
    let d = Dims {
        d_in: 1,
        depth: 1,
        d_ff: 1,
        d_obs: 1,
        lag: 1,
    };
    let noise = NoiseScales {
        var_q: 0.1,
        var_k: 0.1,
        var_v: 0.2,
        var_z: 0.1,
        var_obs: 0.2,
    };
    let mut p = ModelParams::zeros(d, noise).unwrap();
    p.head.kind = HeadKind::Identity;
    p.w_v = Mat::from_vec(1, 1, vec![0.8]).unwrap();
    let xs = series(3, 41);
    let out = smc::filter_sequence(&xs, &p, 20, &SeededRng::new(42)).unwrap();
    let roll = multistep_forecast(&out.cloud, &p, 5, 4000, &mut SeededRng::new(43)).unwrap();
    let var: Vec<f64> = roll.variances().iter().map(|v| v[0]).collect();
    // k-step variance of the equivalent AR(1) with sigma2 = 0.5 plus the
    // spread of the starting particles
    for k in 1..5 {
        assert!(var[k] > var[k - 1], "{var:?}");
    }
    assert!((var[4] - 0.5 * (1.0 - 0.64f64.powi(5)) / 0.36).abs() < 0.25);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pooled_picp_is_count_weighted_mean(
        seed in 0u64..10_000,
        n_seq in 1usize..5,
        steps in 1usize..6,
        d in 1usize..3,
    ) {
        let mut rng = SeededRng::new(seed);
        let mut bs = Vec::new();
        let mut truth = Vec::new();
        for _ in 0..n_seq {
            let mut lower = Vec::new();
            let mut upper = Vec::new();
            let mut x = Vec::new();
            for _ in 0..steps {
                let lo: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
                upper.push(lo.iter().map(|l| l + rng.uniform()).collect());
                lower.push(lo);
                x.push((0..d).map(|_| rng.normal()).collect());
            }
            bs.push(IntervalBounds { lower, upper });
            truth.push(x);
        }
        let c = picp_mpiw(&bs, &truth, 1).unwrap();
        prop_assert!((0.0..=1.0).contains(&c.picp));
        prop_assert!(c.mpiw >= 0.0);
        let total: usize = c.per_timestep.iter().map(|p| p.n).sum();
        let weighted: f64 = c.per_timestep.iter().map(|p| p.picp * p.n as f64).sum::<f64>() / total as f64;
        prop_assert!((weighted - c.picp).abs() < 1e-12);
    }

    #[test]
    fn dist_mse_is_order_free_and_additive(seed in 0u64..10_000, n in 2usize..30) {
        let mut rng = SeededRng::new(seed);
        let draws: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.normal()]).collect();
        let modes = vec![vec![(0.6, vec![0.3]), (0.4, vec![-0.2])]];
        let s = PredictiveSamples { steps: vec![draws.clone()] };
        let mut rev = draws.clone();
        rev.reverse();
        let r = PredictiveSamples { steps: vec![rev] };
        let a = dist_mse(&s, &modes).unwrap();
        prop_assert!((a - dist_mse(&r, &modes).unwrap()).abs() < 1e-12);

        let two = PredictiveSamples { steps: vec![draws.clone(), draws] };
        let mut whole = DistMse::default();
        whole.add(&two, &[modes[0].clone(), modes[0].clone()]).unwrap();
        let mut parts = DistMse::default();
        parts.add(&s, &modes).unwrap();
        parts.add(&s, &modes).unwrap();
        prop_assert!((whole.value().unwrap() - parts.value().unwrap()).abs() < 1e-12);
    }
}
