//! Finite-difference gradient checks and independent numerical oracles,
//! shared by the core integration tests and the acceptance suite.
#![allow(dead_code)]

use hierclass_core::model::{BackboneSpec, C2fBlockSpec, CbsBlockSpec, HeadSpec, Model, StageSpec};
use hierclass_core::seed::rng;
use hierclass_core::tensor::{adam_step, AdamConfig, AdamState, Mode, Tape, Tensor, Var};
use hierclass_core::train::{cluster_items, KMeansParams};
use hierclass_core::Result;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative error between analytic and numeric gradients.
pub const FD_MAX_REL_ERR: f64 = 1e-5;
/// Below this magnitude relative error is measured against this floor, so
/// round-off on vanishing gradients does not count as disagreement.
pub const FD_REL_FLOOR: f64 = 1e-4;
pub const FD_DRAWS: usize = 50;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub op: &'static str,
    pub draws: usize,
    pub entries: usize,
    pub max_rel_err: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.draws >= FD_DRAWS && self.max_rel_err < FD_MAX_REL_ERR
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_REL_FLOOR)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

fn projected(inputs: &[Tensor<f64>], f: &Build, proj: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars).unwrap();
    tape.value(out).data().iter().zip(proj).map(|(a, b)| a * b).sum()
}

/// Compare the tape's vector-Jacobian product against central differences of
/// a random projection of the output, for every element of the first
/// `differentiable` inputs (the rest are held fixed).
fn check_op(
    op: &'static str,
    seed: u64,
    differentiable: usize,
    make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    f: &Build,
) -> GradReport {
    let mut r = rng(seed);
    let mut report = GradReport { op, draws: 0, entries: 0, max_rel_err: 0.0 };
    for _ in 0..FD_DRAWS {
        let inputs = make(&mut r);
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(k, t)| if k < differentiable { tape.variable(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        let out = f(&mut tape, &vars).unwrap();
        let proj: Vec<f64> = (0..tape.value(out).len()).map(|_| r.random_range(-1.0..1.0)).collect();
        tape.backward_from(out, proj.clone()).unwrap();
        for (k, &v) in vars.iter().enumerate().take(differentiable) {
            let analytic = tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
            for (j, &a) in analytic.iter().enumerate() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[j] += FD_STEP;
                let mut minus = inputs.clone();
                minus[k].data_mut()[j] -= FD_STEP;
                let numeric = (projected(&plus, f, &proj) - projected(&minus, f, &proj)) / (2.0 * FD_STEP);
                report.max_rel_err = report.max_rel_err.max(rel_err(a, numeric));
                report.entries += 1;
            }
        }
        report.draws += 1;
    }
    report
}

const NORM_EPS: f64 = 1e-5;

pub const GRAD_OPS: [&str; 13] = [
    "conv2d",
    "conv2d_strided",
    "batchnorm_train",
    "batchnorm_eval",
    "silu",
    "max_pool",
    "global_avg_pool",
    "linear",
    "add",
    "concat_channels",
    "slice_channels",
    "softmax_cross_entropy",
    "cbs_c2f_model",
];

pub fn gradient_check(op: &str) -> GradReport {
    match op {
        "conv2d" => check_op(
            "conv2d",
            1,
            3,
            |r| {
                vec![
                    uniform(&[2, 3, 5, 5], -1.0, 1.0, r),
                    uniform(&[4, 3, 3, 3], -1.0, 1.0, r),
                    uniform(&[4], -1.0, 1.0, r),
                ]
            },
            &|t, v| t.conv2d(v[0], v[1], Some(v[2]), 1, 1),
        ),
        "conv2d_strided" => check_op(
            "conv2d_strided",
            2,
            2,
            |r| vec![uniform(&[2, 2, 6, 5], -1.0, 1.0, r), uniform(&[3, 2, 3, 3], -1.0, 1.0, r)],
            &|t, v| t.conv2d(v[0], v[1], None, 2, 1),
        ),
        "batchnorm_train" => check_op(
            "batchnorm_train",
            3,
            3,
            |r| vec![uniform(&[3, 2, 3, 3], -2.0, 2.0, r), uniform(&[2], 0.5, 1.5, r), uniform(&[2], -1.0, 1.0, r)],
            &|t, v| t.batch_norm(v[0], v[1], v[2], &[0.0; 2], &[1.0; 2], Mode::Train, NORM_EPS),
        ),
        "batchnorm_eval" => check_op(
            "batchnorm_eval",
            4,
            3,
            |r| vec![uniform(&[2, 3, 2, 2], -2.0, 2.0, r), uniform(&[3], 0.5, 1.5, r), uniform(&[3], -1.0, 1.0, r)],
            &|t, v| t.batch_norm(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.0, 2.0], Mode::Eval, NORM_EPS),
        ),
        "silu" => check_op("silu", 5, 1, |r| vec![uniform(&[2, 3, 3, 3], -4.0, 4.0, r)], &|t, v| t.silu(v[0])),
        "max_pool" => {
            check_op("max_pool", 6, 1, |r| vec![uniform(&[2, 2, 4, 4], -1.0, 1.0, r)], &|t, v| t.max_pool(v[0], 2))
        }
        "global_avg_pool" => {
            check_op("global_avg_pool", 7, 1, |r| vec![uniform(&[2, 3, 3, 3], -1.0, 1.0, r)], &|t, v| {
                t.global_avg_pool(v[0])
            })
        }
        "linear" => check_op(
            "linear",
            8,
            3,
            |r| vec![uniform(&[3, 5], -1.0, 1.0, r), uniform(&[5, 4], -1.0, 1.0, r), uniform(&[4], -1.0, 1.0, r)],
            &|t, v| t.linear(v[0], v[1], v[2]),
        ),
        "add" => check_op(
            "add",
            9,
            2,
            |r| vec![uniform(&[2, 3, 2, 2], -1.0, 1.0, r), uniform(&[2, 3, 2, 2], -1.0, 1.0, r)],
            &|t, v| {
                // reuse an input twice so accumulation is exercised
                let s = t.add(v[0], v[1])?;
                t.add(s, v[0])
            },
        ),
        "concat_channels" => check_op(
            "concat_channels",
            10,
            3,
            |r| {
                vec![
                    uniform(&[2, 1, 2, 2], -1.0, 1.0, r),
                    uniform(&[2, 2, 2, 2], -1.0, 1.0, r),
                    uniform(&[2, 1, 2, 2], -1.0, 1.0, r),
                ]
            },
            &|t, v| t.concat_channels(&[v[0], v[1], v[2]]),
        ),
        "slice_channels" => {
            check_op("slice_channels", 11, 1, |r| vec![uniform(&[2, 5, 2, 2], -1.0, 1.0, r)], &|t, v| {
                t.slice_channels(v[0], 1, 3)
            })
        }
        "softmax_cross_entropy" => {
            let mut r = rng(12);
            let targets: Vec<Tensor<f64>> = (0..FD_DRAWS)
                .map(|_| {
                    let mut d = vec![0.0; 20];
                    for row in 0..4 {
                        d[row * 5 + r.random_range(0..5)] = 1.0;
                    }
                    Tensor::from_vec([4, 5], d).unwrap()
                })
                .collect();
            // targets ride along as a fixed second input
            let draw = std::cell::Cell::new(0usize);
            let t_ref = &targets;
            check_op(
                "softmax_cross_entropy",
                13,
                1,
                |r| {
                    let i = draw.get();
                    draw.set(i + 1);
                    vec![uniform(&[4, 5], -3.0, 3.0, r), t_ref[i].clone()]
                },
                &|t, v| {
                    let target = t.value(v[1]).clone();
                    t.softmax_cross_entropy(v[0], &target)
                },
            )
        }
        "cbs_c2f_model" => model_gradient_check(),
        other => panic!("unknown op {other}"),
    }
}

fn tiny_model_spec() -> BackboneSpec {
    BackboneSpec {
        stem: CbsBlockSpec::new(2, 3, 3, 1),
        stages: vec![StageSpec { downsample: CbsBlockSpec::new(3, 4, 3, 2), c2f: C2fBlockSpec::new(4, 0.5, 1) }],
        embedding_dim: 4,
    }
}

fn model_loss(model: &Model<f64>, x: &Tensor<f64>, targets: &Tensor<f64>) -> f64 {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let logits = model.forward(&mut tape, xv, Mode::Train).unwrap();
    let loss = tape.softmax_cross_entropy(logits, targets).unwrap();
    tape.value(loss).data()[0]
}

/// Whole CBS/C2f/head stack in train mode, checked on 16 random parameter
/// coordinates per draw.
fn model_gradient_check() -> GradReport {
    let mut r = rng(14);
    let mut report = GradReport { op: "cbs_c2f_model", draws: 0, entries: 0, max_rel_err: 0.0 };
    for draw in 0..FD_DRAWS {
        let mut model: Model<f64> = Model::build(&tiny_model_spec(), &HeadSpec::new(3, 4), draw as u64).unwrap();
        let x = uniform(&[3, 2, 4, 4], -1.0, 1.0, &mut r);
        let targets =
            Tensor::from_vec([3, 3], (0..9).map(|i| if i % 3 == (i / 3 + draw) % 3 { 1.0 } else { 0.0 }).collect())
                .unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let logits = model.forward(&mut tape, xv, Mode::Train).unwrap();
        let loss = tape.softmax_cross_entropy(logits, &targets).unwrap();
        tape.backward(loss).unwrap();
        model.collect_gradients(&mut tape).unwrap();
        let grads: Vec<Vec<f64>> = model.params().iter().map(|p| p.grad().unwrap().to_vec()).collect();
        for _ in 0..16 {
            let k = r.random_range(0..grads.len());
            let j = r.random_range(0..grads[k].len());
            let mut plus = model.clone();
            plus.params_mut()[k].data_mut()[j] += FD_STEP;
            let mut minus = model.clone();
            minus.params_mut()[k].data_mut()[j] -= FD_STEP;
            let numeric = (model_loss(&plus, &x, &targets) - model_loss(&minus, &x, &targets)) / (2.0 * FD_STEP);
            report.max_rel_err = report.max_rel_err.max(rel_err(grads[k][j], numeric));
            report.entries += 1;
        }
        report.draws += 1;
    }
    report
}

// ---------------------------------------------------------------------------
// Oracles

pub const CONV_TOL: f64 = 1e-5;
pub const NORM_TOL: f64 = 1e-5;
pub const NORM_MOMENT_TOL: f64 = 1e-4;
pub const SCALAR_TOL: f64 = 1e-6;
pub const LINEAR_TOL: f64 = 1e-6;
pub const ADAM_TOL: f64 = 1e-10;
pub const SSE_TOL: f64 = 1e-9;

pub type Outcome = std::result::Result<(), String>;
pub type Oracle = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn run(build: impl FnOnce(&mut Tape<f64>) -> Result<Var>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let out = build(&mut tape).unwrap();
    tape.value(out).clone()
}

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
}

#[allow(clippy::needless_range_loop)]
pub fn conv_reference(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, k) = (ws[0], ws[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = Vec::with_capacity(n * o * oh * ow);
    for bi in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += x.data()[((bi * c + ic) * h + iy as usize) * wd + ix as usize]
                                        * w.data()[((oc * c + ic) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

pub fn oracle_conv2d() -> Outcome {
    let ones = run(|tp| {
        let x = tp.constant(Tensor::ones([1, 1, 3, 3]));
        let w = tp.constant(t(&[1, 1, 1, 1], &[1.0]));
        let b = tp.constant(t(&[1], &[0.0]));
        tp.conv2d(x, w, Some(b), 1, 0)
    });
    ensure(ones.shape() == [1, 1, 3, 3] && ones.data().iter().all(|&v| v == 1.0), || {
        format!("identity kernel gave {:?}", ones.data())
    })?;
    let sum = run(|tp| {
        let x = tp.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = tp.constant(Tensor::ones([1, 1, 2, 2]));
        let b = tp.constant(t(&[1], &[0.0]));
        tp.conv2d(x, w, Some(b), 1, 0)
    });
    ensure(sum.shape() == [1, 1, 1, 1] && sum.data() == [10.0], || format!("sum kernel gave {:?}", sum.data()))?;
    let mut r = rng(100);
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let x = uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut r);
        let w = uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut r);
        let b = uniform(&[4], -1.0, 1.0, &mut r);
        let got = run(|tp| {
            let xv = tp.constant(x.clone());
            let wv = tp.constant(w.clone());
            let bv = tp.constant(b.clone());
            tp.conv2d(xv, wv, Some(bv), stride, pad)
        });
        let want = conv_reference(&x, &w, b.data(), stride, pad);
        let d = max_diff(got.data(), &want);
        ensure(d < CONV_TOL, || format!("stride {stride} pad {pad}: max diff {d:e}"))?;
        let again = run(|tp| {
            let xv = tp.constant(x.clone());
            let wv = tp.constant(w.clone());
            let bv = tp.constant(b.clone());
            tp.conv2d(xv, wv, Some(bv), stride, pad)
        });
        ensure(again == got, || "conv2d is not bit-reproducible".into())?;
    }
    Ok(())
}

pub fn oracle_batchnorm() -> Outcome {
    let mut r = rng(101);
    let x = uniform(&[3, 2, 2, 2], -3.0, 3.0, &mut r);
    let id = run(|tp| {
        let xv = tp.constant(x.clone());
        let g = tp.constant(Tensor::ones([2]));
        let b = tp.constant(Tensor::zeros([2]));
        tp.batch_norm(xv, g, b, &[0.0, 0.0], &[1.0, 1.0], Mode::Eval, 0.0)
    });
    ensure(id == x, || "eval identity normalization changed the input".into())?;

    let x = uniform(&[4, 2, 4, 4], -3.0, 5.0, &mut r);
    let y = run(|tp| {
        let xv = tp.constant(x.clone());
        let g = tp.constant(Tensor::ones([2]));
        let b = tp.constant(Tensor::zeros([2]));
        tp.batch_norm(xv, g, b, &[0.0; 2], &[1.0; 2], Mode::Train, NORM_EPS)
    });
    for ch in 0..2 {
        let vals: Vec<f64> = (0..4).flat_map(|n| y.data()[(n * 2 + ch) * 16..(n * 2 + ch + 1) * 16].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        ensure(mean.abs() < NORM_MOMENT_TOL && (var - 1.0).abs() < NORM_MOMENT_TOL, || {
            format!("channel {ch}: mean {mean:e}, variance {var}")
        })?;
    }

    let gamma = [2.0, 0.5];
    let beta = [1.0, -1.0];
    let x = uniform(&[3, 2, 3, 3], -2.0, 2.0, &mut r);
    let y = run(|tp| {
        let xv = tp.constant(x.clone());
        let g = tp.constant(t(&[2], &gamma));
        let b = tp.constant(t(&[2], &beta));
        tp.batch_norm(xv, g, b, &[0.0; 2], &[1.0; 2], Mode::Train, NORM_EPS)
    });
    let mut want = vec![0.0; x.len()];
    for ch in 0..2 {
        let idx: Vec<usize> = (0..3).flat_map(|n| (0..9).map(move |k| (n * 2 + ch) * 9 + k)).collect();
        let mean = idx.iter().map(|&i| x.data()[i]).sum::<f64>() / idx.len() as f64;
        let var = idx.iter().map(|&i| (x.data()[i] - mean).powi(2)).sum::<f64>() / idx.len() as f64;
        for &i in &idx {
            want[i] = gamma[ch] * (x.data()[i] - mean) / (var + NORM_EPS).sqrt() + beta[ch];
        }
    }
    let d = max_diff(y.data(), &want);
    ensure(d < NORM_TOL, || format!("direct formula max diff {d:e}"))?;

    let mean = [0.3, -0.1];
    let var = [0.8, 2.5];
    let y = run(|tp| {
        let xv = tp.constant(x.clone());
        let g = tp.constant(t(&[2], &gamma));
        let b = tp.constant(t(&[2], &beta));
        tp.batch_norm(xv, g, b, &mean, &var, Mode::Eval, NORM_EPS)
    });
    let want: Vec<f64> = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let ch = (i / 9) % 2;
            gamma[ch] * (v - mean[ch]) / (var[ch] + NORM_EPS).sqrt() + beta[ch]
        })
        .collect();
    let d = max_diff(y.data(), &want);
    ensure(d < NORM_TOL, || format!("eval direct formula max diff {d:e}"))
}

pub fn oracle_silu() -> Outcome {
    let y = run(|tp| {
        let x = tp.constant(t(&[3], &[0.0, 20.0, 1.0]));
        tp.silu(x)
    });
    let d = y.data();
    ensure(d[0] == 0.0, || format!("silu(0) = {}", d[0]))?;
    ensure((d[1] - 20.0).abs() < SCALAR_TOL, || format!("silu(20) = {}", d[1]))?;
    // 1 / (1 + e^-1) to 16 significant digits
    ensure((d[2] - 0.731_058_578_630_004_9).abs() < SCALAR_TOL, || format!("silu(1) = {}", d[2]))
}

pub fn oracle_pool() -> Outcome {
    let m = run(|tp| {
        let x = tp.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        tp.max_pool(x, 2)
    });
    ensure(m.data() == [4.0], || format!("max pool gave {:?}", m.data()))?;
    let g = run(|tp| {
        let x = tp.constant(Tensor::full([2, 3, 5, 5], 2.5));
        tp.global_avg_pool(x)
    });
    ensure(g.shape() == [2, 3] && g.data().iter().all(|&v| (v - 2.5).abs() < 1e-15), || {
        format!("global average of a constant gave {:?}", g.data())
    })?;
    let x = uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng(102));
    let got = run(|tp| {
        let xv = tp.constant(x.clone());
        tp.max_pool(xv, 2)
    });
    let mut want = Vec::new();
    for c in 0..2 {
        for oy in 0..2 {
            for ox in 0..2 {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        best = best.max(x.data()[c * 16 + (oy * 2 + dy) * 4 + ox * 2 + dx]);
                    }
                }
                want.push(best);
            }
        }
    }
    ensure(got.data() == want.as_slice(), || "max pool differs from nested-loop oracle".into())?;
    let err = {
        let mut tp = Tape::new();
        let xv = tp.constant(Tensor::<f64>::zeros([1, 1, 3, 4]));
        tp.max_pool(xv, 2)
    };
    ensure(err.is_err(), || "odd extent accepted by max pool".into())
}

pub fn oracle_linear() -> Outcome {
    let mut r = rng(103);
    let x = uniform(&[2, 3], -1.0, 1.0, &mut r);
    let eye = run(|tp| {
        let xv = tp.constant(x.clone());
        let w = tp.constant(t(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        let b = tp.constant(Tensor::zeros([3]));
        tp.linear(xv, w, b)
    });
    ensure(eye.data() == x.data(), || "identity weight changed the input".into())?;
    let six = run(|tp| {
        let xv = tp.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = tp.constant(t(&[2, 1], &[1.0, 1.0]));
        let b = tp.constant(t(&[1], &[3.0]));
        tp.linear(xv, w, b)
    });
    ensure(six.data() == [6.0], || format!("hand example gave {:?}", six.data()))?;
    let x = uniform(&[3, 5], -1.0, 1.0, &mut r);
    let w = uniform(&[5, 4], -1.0, 1.0, &mut r);
    let b = uniform(&[4], -1.0, 1.0, &mut r);
    let got = run(|tp| {
        let xv = tp.constant(x.clone());
        let wv = tp.constant(w.clone());
        let bv = tp.constant(b.clone());
        tp.linear(xv, wv, bv)
    });
    let mut want = Vec::new();
    for i in 0..3 {
        for j in 0..4 {
            let mut acc = b.data()[j];
            for k in 0..5 {
                acc += x.data()[i * 5 + k] * w.data()[k * 4 + j];
            }
            want.push(acc);
        }
    }
    let d = max_diff(got.data(), &want);
    ensure(d < LINEAR_TOL, || format!("matmul oracle max diff {d:e}"))
}

fn ce(logits: &Tensor<f64>, targets: &Tensor<f64>) -> Result<f64> {
    let mut tp = Tape::new();
    let l = tp.constant(logits.clone());
    let out = tp.softmax_cross_entropy(l, targets)?;
    Ok(tp.value(out).data()[0])
}

pub fn oracle_softmax_cross_entropy() -> Outcome {
    let peaked = ce(&t(&[1, 3], &[0.0, 30.0, -5.0]), &t(&[1, 3], &[0.0, 1.0, 0.0])).unwrap();
    ensure((0.0..1e-9).contains(&peaked), || format!("confident loss {peaked:e}"))?;
    let uniform4 = ce(&Tensor::full([2, 4], 0.7), &t(&[2, 4], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
    ensure((uniform4 - 1.386_294_361_119_890_6).abs() < SCALAR_TOL, || format!("uniform loss {uniform4}"))?;
    // ln(1 + e^-1 + e^-2)
    let hand = ce(&t(&[1, 3], &[1.0, 2.0, 3.0]), &t(&[1, 3], &[0.0, 0.0, 1.0])).unwrap();
    ensure((hand - 0.407_605_964_444_380_9).abs() < SCALAR_TOL, || format!("[[1,2,3]] loss {hand}"))?;
    ensure(ce(&t(&[1, 3], &[1.0, 2.0, 3.0]), &t(&[1, 3], &[0.0, 0.5, 0.5])).is_err(), || {
        "non-one-hot target accepted".into()
    })?;
    let mut r = rng(104);
    let logits = uniform(&[6, 5], -20.0, 20.0, &mut r);
    let probs = hierclass_core::tensor::kernels::softmax_rows(logits.data(), 5);
    for row in probs.chunks(5) {
        let s: f64 = row.iter().sum();
        ensure((s - 1.0).abs() < SCALAR_TOL, || format!("softmax row sums to {s}"))?;
    }
    let mut hot = vec![0.0; 30];
    for i in 0..6 {
        hot[i * 5 + i % 5] = 1.0;
    }
    let l = ce(&logits, &t(&[6, 5], &hot)).unwrap();
    ensure(l >= 0.0, || format!("negative cross-entropy {l}"))
}

pub fn oracle_adam() -> Outcome {
    let cfg = AdamConfig::default();
    let mut p = t(&[3], &[0.5, -1.0, 2.0]);
    p.set_grad(vec![0.0; 3]).unwrap();
    let mut s = AdamState::new(&p, cfg);
    adam_step(&mut p, &mut s).unwrap();
    ensure(p.data() == [0.5, -1.0, 2.0] && s.step_count == 1, || "zero gradient moved parameters".into())?;

    for g in [0.3, -4.0, 1e-3] {
        let mut p = t(&[1], &[1.0]);
        p.set_grad(vec![g]).unwrap();
        let mut s = AdamState::new(&p, cfg);
        adam_step(&mut p, &mut s).unwrap();
        let step = (1.0 - p.data()[0]).abs();
        let expected = cfg.learning_rate * g.abs() / (g.abs() + cfg.epsilon);
        ensure((step - expected).abs() < 1e-15 && (step - cfg.learning_rate).abs() < 1e-7, || {
            format!("first step {step} for gradient {g}")
        })?;
    }

    let lr = 0.1;
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut x = 1.0f64;
    let (mut m, mut v) = (0.0f64, 0.0f64);
    let mut p = t(&[1], &[1.0]);
    let mut s = AdamState::new(&p, AdamConfig { learning_rate: lr, ..cfg });
    for step in 1..=5 {
        let g = 2.0 * x;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let m_hat = m / (1.0 - b1.powi(step));
        let v_hat = v / (1.0 - b2.powi(step));
        x -= lr * m_hat / (v_hat.sqrt() + eps);

        let current = p.data()[0];
        p.set_grad(vec![2.0 * current]).unwrap();
        adam_step(&mut p, &mut s).unwrap();
        let d = (p.data()[0] - x).abs();
        ensure(d < ADAM_TOL && s.step_count == step as u64, || format!("step {step}: differs by {d:e}"))?;
    }
    let mut bare = t(&[1], &[0.0]);
    ensure(adam_step(&mut bare, &mut s).is_err(), || "missing gradient accepted".into())
}

fn brute_force_two_groups(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1u32 << n) - 1 {
        let mut sse = 0.0;
        for side in [0, 1] {
            let members: Vec<&Vec<f64>> = (0..n).filter(|&i| (mask >> i) & 1 == side).map(|i| &points[i]).collect();
            for d in 0..dim {
                let c = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                sse += members.iter().map(|p| (p[d] - c).powi(2)).sum::<f64>();
            }
        }
        best = best.min(sse);
    }
    best
}

pub fn oracle_kmeans() -> Outcome {
    let anchors = [[0.0, 0.0, 0.0], [5.0, 0.0, 1.0], [0.0, 5.0, -1.0], [5.0, 5.0, 0.0]];
    let mut r = rng(105);
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    for g in [2, 0, 3, 1, 0, 2, 1, 3, 3, 1, 2, 0] {
        let a = anchors[g];
        pts.push(a.iter().map(|v| v + r.random_range(-0.1..0.1)).collect::<Vec<f64>>());
        truth.push(g);
    }
    // canonical labels: groups numbered by first appearance
    let mut order: Vec<usize> = Vec::new();
    for &g in &truth {
        if !order.contains(&g) {
            order.push(g);
        }
    }
    let planted: Vec<usize> = truth.iter().map(|g| order.iter().position(|o| o == g).unwrap()).collect();
    for seed in 0..5 {
        let m = cluster_items(&pts, 4, seed, KMeansParams::default()).unwrap();
        ensure(m.item_to_group == planted, || format!("seed {seed}: {:?}", m.item_to_group))?;
    }
    let singletons = cluster_items(&pts[..4], 4, 0, KMeansParams::default()).unwrap();
    ensure(singletons.item_to_group == [0, 1, 2, 3], || format!("N = T gave {:?}", singletons.item_to_group))?;
    for trial in 0..10u64 {
        let pts: Vec<Vec<f64>> = (0..8).map(|_| vec![r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)]).collect();
        let optimum = brute_force_two_groups(&pts);
        let m = cluster_items(&pts, 2, trial, KMeansParams::default()).unwrap();
        // unstructured data may leave k-means in a local optimum, but never
        // below the exhaustive one
        ensure(m.within_cluster_sse >= optimum - SSE_TOL, || "SSE below exhaustive optimum".into())?;
    }
    let two_blobs: Vec<Vec<f64>> =
        [[0.0, 0.0], [1.0, 0.5], [0.5, 1.5], [1.5, 1.0], [6.0, 5.0], [7.0, 6.5], [6.5, 4.0], [8.0, 5.5]]
            .iter()
            .map(|p| p.to_vec())
            .collect();
    let optimum = brute_force_two_groups(&two_blobs);
    for seed in 0..5 {
        let m = cluster_items(&two_blobs, 2, seed, KMeansParams::default()).unwrap();
        ensure((m.within_cluster_sse - optimum).abs() < SSE_TOL, || {
            format!("seed {seed}: SSE {} vs exhaustive {optimum}", m.within_cluster_sse)
        })?;
    }
    Ok(())
}

pub const ORACLES: [Oracle; 8] = [
    ("conv2d", oracle_conv2d),
    ("batchnorm", oracle_batchnorm),
    ("silu", oracle_silu),
    ("pool2d", oracle_pool),
    ("linear", oracle_linear),
    ("softmax_cross_entropy", oracle_softmax_cross_entropy),
    ("adam", oracle_adam),
    ("kmeans", oracle_kmeans),
];
