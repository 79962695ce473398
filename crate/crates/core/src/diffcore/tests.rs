use super::*;
use crate::numkit::SeededRng;

/// Builds a scalar from parameter slices on a fresh tape.
type Builder = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

struct Param {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
}

fn eval(params: &[Param], f: &Builder) -> (f64, GradMap) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(i, &p.value, p.rows, p.cols).unwrap())
        .collect();
    let root = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(root, 1.0).unwrap();
    (tape.scalar_value(root), grads.into_param_grads())
}

fn value_only(params: &[Param], f: &Builder) -> f64 {
    eval(params, f).0
}

/// Central finite differences against the tape, max relative error.
fn max_rel_err(params: &mut [Param], f: &Builder) -> f64 {
    let (_, grads) = eval(params, f);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        for k in 0..params[i].value.len() {
            let orig = params[i].value[k];
            params[i].value[k] = orig + h;
            let up = value_only(params, f);
            params[i].value[k] = orig - h;
            let down = value_only(params, f);
            params[i].value[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.get(i).unwrap()[k];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

fn rand_param(rng: &mut SeededRng, rows: usize, cols: usize) -> Param {
    Param {
        value: (0..rows * cols).map(|_| rng.uniform_range(-1.5, 1.5)).collect(),
        rows,
        cols,
    }
}

fn check_kernel(name: &str, shapes: &[(usize, usize)], f: &Builder) {
    for cfg in 0..20u64 {
        let mut rng = SeededRng::new(1000 + cfg);
        let mut params: Vec<Param> = shapes.iter().map(|&(r, c)| rand_param(&mut rng, r, c)).collect();
        let err = max_rel_err(&mut params, f);
        assert!(err < 1e-4, "{name}: config {cfg} rel err {err}");
    }
}

#[test]
fn square_value_and_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(0, &[3.0], 1, 1).unwrap();
    let y = tape.mul(x, x).unwrap();
    assert_eq!(tape.scalar_value(y), 9.0);
    let g = tape.backward(y, 1.0).unwrap();
    assert_eq!(g.param_grads().get(0).unwrap(), &[6.0]);
}

#[test]
fn unused_parameter_gets_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.param(0, &[2.0], 1, 1).unwrap();
    let _w = tape.param(1, &[5.0, 6.0], 2, 1).unwrap();
    let y = tape.mul(x, x).unwrap();
    let g = tape.backward(y, 1.0).unwrap();
    assert_eq!(g.param_grads().get(1).unwrap(), &[0.0, 0.0]);
    assert_eq!(g.param_grads().len(), 2);
}

#[test]
fn non_scalar_root_is_rejected() {
    let mut tape = Tape::new();
    let x = tape.param(0, &[1.0, 2.0], 2, 1).unwrap();
    assert!(matches!(tape.backward(x, 1.0), Err(Error::Domain(_))));
}

#[test]
fn shape_errors_surface_at_construction() {
    let mut tape = Tape::new();
    let a = tape.param(0, &[1.0; 6], 2, 3).unwrap();
    let x = tape.constant(vec![1.0, 2.0]);
    assert!(tape.matvec(a, x).is_err());
    let y = tape.constant(vec![1.0, 2.0, 3.0]);
    assert!(tape.add(x, y).is_err());
    assert!(tape.param(1, &[1.0], 2, 2).is_err());
}

#[test]
fn taped_softmax_matches_numkit() {
    let logits = vec![0.3, -1.2, 4.0, 0.0];
    let mut tape = Tape::new();
    let x = tape.constant(logits.clone());
    let p = tape.softmax(x).unwrap();
    assert_eq!(tape.value(p), numkit::softmax(&logits).unwrap().as_slice());
}

#[test]
fn affine_layer_norm_chain_matches_direct_evaluation() {
    let mut rng = SeededRng::new(5);
    let a: Vec<f64> = (0..12).map(|_| rng.normal()).collect();
    let x: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
    let gain = vec![1.1, 0.9, 1.0, 0.5];
    let bias = vec![0.0, 0.1, -0.2, 0.3];

    let direct = {
        let m = numkit::Mat::from_vec(4, 3, a.clone()).unwrap();
        let h = m.matvec(&x).unwrap();
        numkit::layer_norm(&h, &gain, &bias, 1e-6).unwrap()
    };

    let mut tape = Tape::new();
    let av = tape.param(0, &a, 4, 3).unwrap();
    let xv = tape.constant(x);
    let h = tape.matvec(av, xv).unwrap();
    let g = tape.param(1, &gain, 4, 1).unwrap();
    let b = tape.param(2, &bias, 4, 1).unwrap();
    let out = tape.layer_norm(h, g, b, 1e-6).unwrap();
    assert_eq!(tape.value(out), direct.as_slice());
}

#[test]
fn gradient_checks_per_kernel() {
    check_kernel("matvec", &[(3, 4), (4, 1), (3, 1)], &|t, p| {
        let y = t.matvec(p[0], p[1])?;
        t.dot(y, p[2])
    });
    check_kernel("add_sub_mul", &[(4, 1), (4, 1), (4, 1)], &|t, p| {
        let a = t.add(p[0], p[1])?;
        let b = t.sub(a, p[2])?;
        let c = t.mul(b, p[0])?;
        Ok(t.sum(c))
    });
    check_kernel("scale_offset_scale_by", &[(1, 1), (3, 1)], &|t, p| {
        let a = t.scale_by(p[0], p[1])?;
        let b = t.offset(a, 0.7);
        let c = t.scale(b, -1.3);
        Ok(t.squared_norm(c))
    });
    check_kernel("softmax", &[(5, 1), (5, 1)], &|t, p| {
        let s = t.softmax(p[0])?;
        t.dot(s, p[1])
    });
    check_kernel("layer_norm", &[(6, 1), (6, 1), (6, 1), (6, 1)], &|t, p| {
        let y = t.layer_norm(p[0], p[1], p[2], 1e-6)?;
        t.dot(y, p[3])
    });
    check_kernel("relu", &[(6, 1), (6, 1)], &|t, p| {
        let y = t.relu(p[0]);
        t.dot(y, p[1])
    });
    check_kernel("weighted_sum", &[(3, 1), (4, 1), (4, 1), (4, 1), (4, 1)], &|t, p| {
        let w = t.softmax(p[0])?;
        let z = t.weighted_sum(w, &[p[1], p[2], p[3]])?;
        t.dot(z, p[4])
    });
    check_kernel("stack_rows", &[(3, 1), (3, 1), (3, 1)], &|t, p| {
        let k = t.stack_rows(&[p[0], p[1]])?;
        let l = t.matvec(k, p[2])?;
        let s = t.softmax(l)?;
        let i = t.index(s, 0)?;
        t.dot(i, i)
    });
    check_kernel("index", &[(4, 1), (3, 1)], &|t, p| {
        let a = t.index(p[0], 2)?;
        let b = t.scale_by(a, p[1])?;
        Ok(t.squared_norm(b))
    });
    check_kernel("log_gaussian", &[(3, 1), (3, 1)], &|t, p| {
        t.log_gaussian(p[0], p[1], 0.7)
    });
}

#[test]
fn backward_is_linear_in_seed() {
    let mut tape = Tape::new();
    let a = tape.param(0, &[0.5, -1.0, 2.0], 3, 1).unwrap();
    let s = tape.softmax(a).unwrap();
    let y = tape.squared_norm(s);
    let g1 = tape.backward(y, 1.0).unwrap();
    let g3 = tape.backward(y, 3.0).unwrap();
    for (u, v) in g1
        .param_grads()
        .get(0)
        .unwrap()
        .iter()
        .zip(g3.param_grads().get(0).unwrap())
    {
        assert!((3.0 * u - v).abs() < 1e-15);
    }
}

#[test]
fn stop_gradient_blocks_ancestors() {
    // loss = sg(w) * f(x), w = c^2, f(x) = x^3
    let mut tape = Tape::new();
    let c = tape.param(0, &[1.5], 1, 1).unwrap();
    let x = tape.param(1, &[2.0], 1, 1).unwrap();
    let w = tape.mul(c, c).unwrap();
    let w_sg = tape.stop_gradient(w);
    let x2 = tape.mul(x, x).unwrap();
    let f = tape.mul(x2, x).unwrap();
    let loss = tape.mul(w_sg, f).unwrap();
    let g = tape.backward(loss, 1.0).unwrap();
    assert_eq!(g.param_grads().get(0).unwrap(), &[0.0]);
    assert!((g.param_grads().get(1).unwrap()[0] - 2.25 * 12.0).abs() < 1e-12);
    assert_eq!(tape.value(w_sg), tape.value(w));

    let k = tape.constant(vec![4.0, 5.0]);
    let k_sg = tape.stop_gradient(k);
    assert_eq!(tape.value(k_sg), &[4.0, 5.0]);
}

#[test]
fn stop_gradient_weights_match_frozen_weight_oracle() {
    // Two particles: weights = softmax(theta * a), terms f_m = (theta - b_m)^2.
    // The taped loss sum sg(w_m) f_m must have the gradient of the loss with
    // the weights frozen at their current value.
    let a = [0.4, -0.9];
    let b = [1.0, -2.0];
    let build = |t: &mut Tape, theta: Var| -> Result<Var> {
        let av = t.constant(a.to_vec());
        let logits = t.scale_by(theta, av)?;
        let w = t.softmax(logits)?;
        let w = t.stop_gradient(w);
        let mut terms = Vec::new();
        for bm in b {
            let d = t.offset(theta, -bm);
            terms.push(t.squared_norm(d));
        }
        let wsum = t.weighted_sum(w, &terms)?;
        Ok(wsum)
    };
    let theta0 = 0.3;
    let mut tape = Tape::new();
    let th = tape.param(0, &[theta0], 1, 1).unwrap();
    let loss = build(&mut tape, th).unwrap();
    let analytic = tape.backward(loss, 1.0).unwrap().param_grads().get(0).unwrap()[0];

    let w0 = numkit::softmax(&[theta0 * a[0], theta0 * a[1]]).unwrap();
    let frozen = |theta: f64| w0[0] * (theta - b[0]).powi(2) + w0[1] * (theta - b[1]).powi(2);
    let h = 1e-5;
    let numeric = (frozen(theta0 + h) - frozen(theta0 - h)) / (2.0 * h);
    assert!((analytic - numeric).abs() / numeric.abs() < 1e-6);

    // and it differs from the full derivative through the weights
    let full = |theta: f64| {
        let w = numkit::softmax(&[theta * a[0], theta * a[1]]).unwrap();
        w[0] * (theta - b[0]).powi(2) + w[1] * (theta - b[1]).powi(2)
    };
    let numeric_full = (full(theta0 + h) - full(theta0 - h)) / (2.0 * h);
    assert!((analytic - numeric_full).abs() > 1e-3);
}

#[test]
fn gradmap_merge_is_entrywise_sum() {
    let mut a = GradMap::default();
    a.accumulate(0, &[1.0, 2.0]);
    let mut b = GradMap::default();
    b.accumulate(0, &[0.5, 0.5]);
    b.accumulate(3, &[1.0]);
    a.merge(&b);
    assert_eq!(a.get(0).unwrap(), &[1.5, 2.5]);
    assert_eq!(a.get(3).unwrap(), &[1.0]);
}
