//! Central finite-difference checks of every tape primitive, every loss and
//! a few composite graphs.

use camseg::autodiff::{Tape, Var};
use camseg::cam::{
    forward_cam, gap_predict, gmp_predict, importance_draws, CamNetwork, NetworkShape,
};
use camseg::losses::{bce_multi, cls_loss, fsl_with_sigma, total_loss};
use camseg::raster::RgbImage;
use camseg::rng::{rng_for, Rng};
use rand::Rng as _;

use crate::Outcome;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const KINK_TOL: f64 = 1e-2;
/// Inputs this close to a relu, max or clamp kink use [`KINK_TOL`].
pub const KINK_BAND: f64 = 1e-3;
/// Denominator floor of the relative error; central differences at this
/// step size carry absolute noise far below it.
pub const FLOOR: f64 = 1e-6;
pub const INSTANCES: usize = 50;

type Values = Vec<Vec<f64>>;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Largest relative error between `grad(x)` and central differences of `f`.
fn compare(x: &Values, f: &dyn Fn(&Values) -> f64, grad: &Values) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for (i, g) in grad.iter().enumerate() {
        for j in 0..x[i].len() {
            probe[i][j] = x[i][j] + STEP;
            let up = f(&probe);
            probe[i][j] = x[i][j] - STEP;
            let down = f(&probe);
            probe[i][j] = x[i][j];
            worst = worst.max(rel_err(g[j], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

type Build = dyn Fn(&mut Tape, &[Var]) -> camseg::Result<Var>;

/// Gradient check of a graph over tape variables. The graph output is
/// reduced with fixed random weights.
fn check_graph(shapes: &[Vec<usize>], x: &Values, weights_seed: u64, build: &Build) -> f64 {
    let run = |vals: &Values, want_grad: bool| -> (f64, Values) {
        let mut t = Tape::new();
        let vars: Vec<Var> = shapes
            .iter()
            .zip(vals)
            .map(|(s, v)| t.variable(s, v.clone()).unwrap())
            .collect();
        let out = build(&mut t, &vars).unwrap();
        let n = t.value(out).len();
        let mut rng = rng_for(weights_seed, &[]);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shape = t.shape(out).to_vec();
        let w = t.constant(&shape, w).unwrap();
        let prod = t.mul(out, w).unwrap();
        let loss = t.sum(prod);
        let value = t.item(loss);
        if !want_grad {
            return (value, Vec::new());
        }
        let g = t.backward(loss).unwrap();
        let grads = vars
            .iter()
            .zip(vals)
            .map(|(&v, x)| g.get_or_zeros(v, x.len()))
            .collect();
        (value, grads)
    };
    let (_, grad) = run(x, true);
    compare(x, &|v| run(v, false).0, &grad)
}

fn uniform(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Smallest gap between the largest and second largest entry of each group.
fn top_gap(groups: impl Iterator<Item = Vec<f64>>) -> f64 {
    groups
        .map(|mut g| {
            if g.len() < 2 {
                return f64::INFINITY;
            }
            g.sort_by(|a, b| b.total_cmp(a));
            g[0] - g[1]
        })
        .fold(f64::INFINITY, f64::min)
}

fn columns(x: &[f64], cols: usize) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..cols).map(move |c| x.iter().skip(c).step_by(cols).copied().collect())
}

/// One random instance: shapes, values and whether it sits near a kink.
struct Instance {
    shapes: Vec<Vec<usize>>,
    values: Values,
    kink: bool,
}

type Make = Box<dyn Fn(&mut Rng) -> (Instance, Box<Build>)>;

struct Case {
    name: &'static str,
    make: Make,
}

fn case(name: &'static str, make: impl Fn(&mut Rng) -> (Instance, Box<Build>) + 'static) -> Case {
    Case {
        name,
        make: Box::new(make),
    }
}

fn dims(rng: &mut Rng) -> Vec<usize> {
    vec![rng.gen_range(1..5), rng.gen_range(1..5)]
}

fn one(shape: Vec<usize>, values: Vec<f64>, kink: bool) -> Instance {
    Instance {
        shapes: vec![shape],
        values: vec![values],
        kink,
    }
}

fn unary(
    name: &'static str,
    lo: f64,
    hi: f64,
    op: fn(&mut Tape, Var) -> Var,
    kink: fn(&[f64]) -> bool,
) -> Case {
    case(name, move |rng| {
        let s = dims(rng);
        let v = uniform(rng, s[0] * s[1], lo, hi);
        let k = kink(&v);
        (one(s, v, k), Box::new(move |t, x| Ok(op(t, x[0]))))
    })
}

fn binary(name: &'static str, op: fn(&mut Tape, Var, Var) -> camseg::Result<Var>) -> Case {
    case(name, move |rng| {
        let s = dims(rng);
        let n = s[0] * s[1];
        let inst = Instance {
            shapes: vec![s.clone(), s],
            values: vec![uniform(rng, n, -2.0, 2.0), uniform(rng, n, -2.0, 2.0)],
            kink: false,
        };
        (inst, Box::new(move |t, x| op(t, x[0], x[1])))
    })
}

fn reduction(
    name: &'static str,
    op: fn(&mut Tape, Var) -> camseg::Result<Var>,
    kink: fn(&[f64], &[usize]) -> bool,
) -> Case {
    case(name, move |rng| {
        let s = dims(rng);
        let v = uniform(rng, s[0] * s[1], -2.0, 2.0);
        let k = kink(&v, &s);
        (one(s, v, k), Box::new(move |t, x| op(t, x[0])))
    })
}

fn smooth(_: &[f64]) -> bool {
    false
}

fn no_kink(_: &[f64], _: &[usize]) -> bool {
    false
}

fn primitive_cases() -> Vec<Case> {
    vec![
        binary("add", |t, a, b| t.add(a, b)),
        binary("sub", |t, a, b| t.sub(a, b)),
        binary("mul", |t, a, b| t.mul(a, b)),
        case("scale", |rng| {
            let s = dims(rng);
            let v = uniform(rng, s[0] * s[1], -2.0, 2.0);
            let c = rng.gen_range(-3.0..3.0);
            (one(s, v, false), Box::new(move |t, x| Ok(t.scale(x[0], c))))
        }),
        case("offset", |rng| {
            let s = dims(rng);
            let v = uniform(rng, s[0] * s[1], -2.0, 2.0);
            let c = rng.gen_range(-3.0..3.0);
            (
                one(s, v, false),
                Box::new(move |t, x| Ok(t.offset(x[0], c))),
            )
        }),
        case("matmul", |rng| {
            let (m, k, n) = (
                rng.gen_range(1..5),
                rng.gen_range(1..5),
                rng.gen_range(1..5),
            );
            let inst = Instance {
                shapes: vec![vec![m, k], vec![k, n]],
                values: vec![
                    uniform(rng, m * k, -2.0, 2.0),
                    uniform(rng, k * n, -2.0, 2.0),
                ],
                kink: false,
            };
            (inst, Box::new(|t, x| t.matmul(x[0], x[1])))
        }),
        case("conv2d", |rng| {
            let (h, w, cin, cout) = (
                rng.gen_range(2..6),
                rng.gen_range(2..6),
                rng.gen_range(1..4),
                rng.gen_range(1..4),
            );
            let (kh, kw) = ([1, 3][rng.gen_range(0..2)], [1, 3][rng.gen_range(0..2)]);
            let inst = Instance {
                shapes: vec![vec![h, w, cin], vec![kh, kw, cin, cout], vec![cout]],
                values: vec![
                    uniform(rng, h * w * cin, -1.0, 1.0),
                    uniform(rng, kh * kw * cin * cout, -1.0, 1.0),
                    uniform(rng, cout, -1.0, 1.0),
                ],
                kink: false,
            };
            (inst, Box::new(|t, x| t.conv2d(x[0], x[1], Some(x[2]))))
        }),
        unary(
            "relu",
            -2.0,
            2.0,
            |t, x| t.relu(x),
            |v| v.iter().any(|x| x.abs() < KINK_BAND),
        ),
        unary("exp", -2.0, 2.0, |t, x| t.exp(x), smooth),
        unary("log", 0.1, 3.0, |t, x| t.log(x), smooth),
        unary("tanh", -3.0, 3.0, |t, x| t.tanh(x), smooth),
        unary("logistic", -4.0, 4.0, |t, x| t.logistic(x), smooth),
        unary("softplus", -4.0, 4.0, |t, x| t.softplus(x), smooth),
        case("power", |rng| {
            let s = dims(rng);
            let v = uniform(rng, s[0] * s[1], 0.2, 2.0);
            let p = rng.gen_range(-2.0..3.0);
            (one(s, v, false), Box::new(move |t, x| Ok(t.power(x[0], p))))
        }),
        case("clamp", |rng| {
            let s = dims(rng);
            let v = uniform(rng, s[0] * s[1], -2.0, 2.0);
            let lo = rng.gen_range(-1.5..0.0);
            let hi = rng.gen_range(0.0..1.5);
            let k = v
                .iter()
                .any(|x| (x - lo).abs() < KINK_BAND || (x - hi).abs() < KINK_BAND);
            (
                one(s, v, k),
                Box::new(move |t, x| Ok(t.clamp(x[0], lo, hi))),
            )
        }),
        reduction("sum", |t, x| Ok(t.sum(x)), no_kink),
        reduction("mean", |t, x| Ok(t.mean(x)), no_kink),
        reduction(
            "max",
            |t, x| t.max(x),
            |v, _| top_gap(std::iter::once(v.to_vec())) < KINK_BAND,
        ),
        reduction("sum_axis0", |t, x| t.sum_axis0(x), no_kink),
        reduction("mean_axis0", |t, x| t.mean_axis0(x), no_kink),
        reduction(
            "max_axis0",
            |t, x| t.max_axis0(x),
            |v, s| top_gap(columns(v, s[1])) < KINK_BAND,
        ),
        case("index_select", |rng| {
            let s = dims(rng);
            let n = s[0] * s[1];
            let v = uniform(rng, n, -2.0, 2.0);
            let idx: Vec<usize> = (0..rng.gen_range(1..10))
                .map(|_| rng.gen_range(0..n))
                .collect();
            (
                one(s, v, false),
                Box::new(move |t, x| t.index_select(x[0], &idx)),
            )
        }),
        case("reshape", |rng| {
            let s = dims(rng);
            let v = uniform(rng, s[0] * s[1], -2.0, 2.0);
            let to = vec![s[1], s[0]];
            (one(s, v, false), Box::new(move |t, x| t.reshape(x[0], &to)))
        }),
        reduction("softmax", |t, x| t.softmax(x), no_kink),
    ]
}

fn random_probs(rng: &mut Rng, n: usize, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * k);
    for _ in 0..n {
        let e: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0f64..2.0).exp()).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / z));
    }
    out
}

fn random_image(rng: &mut Rng, w: usize, h: usize) -> RgbImage {
    // a small palette so that similar and dissimilar pairs both occur
    let palette: Vec<[f64; 3]> = (0..3).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let data = (0..w * h)
        .flat_map(|_| palette[rng.gen_range(0..3)])
        .collect();
    RgbImage::new(w, h, data).unwrap()
}

fn labels(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| f64::from(rng.gen_bool(0.5) as u8)).collect()
}

fn loss_cases() -> Vec<Case> {
    vec![
        case("bce", |rng| {
            let (rows, k) = (rng.gen_range(1..4), rng.gen_range(1..5));
            let y = labels(rng, k);
            let q = uniform(rng, rows * k, 0.02, 0.98);
            (
                one(vec![rows, k], q, false),
                Box::new(move |t, x| bce_multi(t, &y, x[0])),
            )
        }),
        case("cls_loss", |rng| {
            let (rows, k) = (rng.gen_range(1..4), rng.gen_range(1..5));
            let y = labels(rng, k);
            let lambda = rng.gen_range(0.0..=1.0);
            let inst = Instance {
                shapes: vec![vec![k], vec![rows, k]],
                values: vec![
                    uniform(rng, k, 0.02, 0.98),
                    uniform(rng, rows * k, 0.02, 0.98),
                ],
                kink: false,
            };
            (
                inst,
                Box::new(move |t, x| cls_loss(t, &y, x[0], x[1], lambda)),
            )
        }),
        case("fsl", |rng| {
            let (h, w, k) = (
                rng.gen_range(2..6),
                rng.gen_range(2..6),
                rng.gen_range(2..5),
            );
            let image = random_image(rng, w, h);
            let radius = rng.gen_range(1..4);
            let inst = Instance {
                shapes: vec![vec![h, w, k], vec![1], vec![1]],
                values: vec![
                    random_probs(rng, h * w, k),
                    vec![rng.gen_range(-1.0..2.0)],
                    vec![rng.gen_range(-2.0..2.0)],
                ],
                kink: false,
            };
            (
                inst,
                Box::new(move |t, x| {
                    let sigma = t.softplus(x[1]);
                    fsl_with_sigma(t, x[0], &image, sigma, x[2], radius, 1e-4)
                }),
            )
        }),
        case("total_loss", |rng| {
            let (h, w, k) = (rng.gen_range(2..5), rng.gen_range(2..5), 3);
            let image = random_image(rng, w, h);
            let probs = random_probs(rng, h * w, k);
            let kink = top_gap(columns(&probs, k)) < KINK_BAND;
            let y = labels(rng, k - 1);
            let lambda = rng.gen_range(0.0..=1.0);
            let picks: Vec<usize> = (0..2 * (k - 1))
                .map(|i| rng.gen_range(0..h * w) * k + 1 + i % (k - 1))
                .collect();
            let inst = Instance {
                shapes: vec![vec![h, w, k], vec![1], vec![1]],
                values: vec![
                    probs,
                    vec![rng.gen_range(-1.0..2.0)],
                    vec![rng.gen_range(-2.0..2.0)],
                ],
                kink,
            };
            (
                inst,
                Box::new(move |t, x| {
                    let pooled = gmp_predict(t, x[0])?;
                    let pooled = t.index_select(pooled, &[1, 2])?;
                    let sampled = t.index_select(x[0], &picks)?;
                    let sampled = t.reshape(sampled, &[2, 2])?;
                    let cls = cls_loss(t, &y, pooled, sampled, lambda)?;
                    let sigma = t.softplus(x[1]);
                    let f = fsl_with_sigma(t, x[0], &image, sigma, x[2], 2, 1e-4)?;
                    total_loss(t, cls, Some(f))
                }),
            )
        }),
        case("random 5-parameter graph", |rng| {
            // node list starts with the five parameters; each new node applies
            // a random op to random earlier nodes
            let program: Vec<(u8, usize, usize)> = (0..10)
                .map(|i| {
                    (
                        rng.gen_range(0..8),
                        rng.gen_range(0..5 + i),
                        rng.gen_range(0..5 + i),
                    )
                })
                .collect();
            let inst = Instance {
                shapes: vec![vec![1]; 5],
                values: (0..5).map(|_| vec![rng.gen_range(-1.5..1.5)]).collect(),
                kink: false,
            };
            (
                inst,
                Box::new(move |t, x| {
                    let mut nodes: Vec<Var> = x.to_vec();
                    for &(op, a, b) in &program {
                        let (a, b) = (nodes[a], nodes[b]);
                        let v = match op {
                            0 => t.add(a, b)?,
                            1 => t.sub(a, b)?,
                            2 => t.mul(a, b)?,
                            3 => t.tanh(a),
                            4 => t.logistic(a),
                            5 => t.softplus(a),
                            6 => {
                                let s = t.scale(a, 0.3);
                                t.exp(s)
                            }
                            _ => {
                                let sq = t.power(a, 2.0);
                                let s = t.offset(sq, 1.0);
                                t.log(s)
                            }
                        };
                        nodes.push(v);
                    }
                    let tail = &nodes[nodes.len() - 3..];
                    let s = t.add(tail[0], tail[1])?;
                    t.add(s, tail[2])
                }),
            )
        }),
    ]
}

/// Whether any hidden pre-activation of `net` on `image` lies within
/// [`KINK_BAND`] of zero. Recomputes the hidden layers from the parameters.
fn relu_near_kink(net: &CamNetwork, image: &RgbImage) -> bool {
    let mut t = Tape::new();
    let centred = image.data().iter().map(|v| v - 0.5).collect();
    let mut x = t
        .constant(&[image.height(), image.width(), 3], centred)
        .unwrap();
    let params = net.params();
    let hidden = params.len() / 2 - 1;
    for layer in params.chunks_exact(2).take(hidden) {
        let k = t.leaf(layer[0]);
        let b = t.leaf(layer[1]);
        let z = t.conv2d(x, k, Some(b)).unwrap();
        if t.value(z).iter().any(|v| v.abs() < KINK_BAND) {
            return true;
        }
        x = t.relu(z);
    }
    false
}

#[derive(Clone, Copy)]
enum Head {
    Gap,
    Gmp,
    Sampled,
}

/// Gradient of a CAM network's parameters through a 4×4 forward pass and
/// one aggregation head.
fn end_to_end(head: Head, seed: u64) -> (f64, bool) {
    let mut rng = rng_for(seed, &[]);
    let shape = NetworkShape {
        hidden: 3,
        conv_layers: 2,
        classes: 3,
    };
    let mut net = CamNetwork::new(shape, rng.gen()).unwrap();
    // biases start at zero; random ones avoid pre-activations pinned at a kink
    for (i, p) in net.params_mut().into_iter().enumerate() {
        if i % 2 == 1 {
            p.values_mut()
                .iter_mut()
                .for_each(|b| *b = rng.gen_range(-0.5..0.5));
        }
    }
    let net = net;
    let image = random_image(&mut rng, 4, 4);
    let y = labels(&mut rng, 2);
    let draw_seed: u64 = rng.gen();

    // loss, probabilities and sampled indices for the current parameters
    let forward = |net: &CamNetwork, grads: bool| -> (f64, Vec<f64>, Option<CamNetwork>) {
        let mut t = Tape::new();
        let bound = net.bind(&mut t);
        let am = forward_cam(&mut t, &bound, &image).unwrap();
        let pred = match head {
            Head::Gap => gap_predict(&mut t, am.logits).unwrap(),
            Head::Gmp => gmp_predict(&mut t, am.probs).unwrap(),
            Head::Sampled => {
                let mut draws = rng_for(draw_seed, &[]);
                let d = importance_draws(&mut t, &am, &[0, 1, 2], 2, &mut draws).unwrap();
                t.mean_axis0(d).unwrap()
            }
        };
        let fg = t.index_select(pred, &[1, 2]).unwrap();
        let loss = bce_multi(&mut t, &y, fg).unwrap();
        let probs = t.value(am.probs).to_vec();
        let acc = grads.then(|| {
            let g = t.backward(loss).unwrap();
            let mut copy = net.clone();
            copy.accumulate(&bound, &g);
            copy
        });
        (t.item(loss), probs, acc)
    };

    let (_, probs, acc) = forward(&net, true);
    let acc = acc.unwrap();
    let grad: Values = acc.params().iter().map(|p| p.grad().to_vec()).collect();
    let x: Values = net.params().iter().map(|p| p.values().to_vec()).collect();
    let kink = relu_near_kink(&net, &image)
        || (matches!(head, Head::Gmp) && top_gap(columns(&probs, 3)) < KINK_BAND);

    let f = |vals: &Values| -> f64 {
        let mut probe = net.clone();
        for (p, v) in probe.params_mut().into_iter().zip(vals) {
            p.values_mut().copy_from_slice(v);
        }
        forward(&probe, false).0
    };
    (compare(&x, &f, &grad), kink)
}

struct Tally {
    name: &'static str,
    worst: f64,
    worst_kink: f64,
    kinks: usize,
}

impl Tally {
    fn add(&mut self, err: f64, kink: bool) {
        if kink {
            self.kinks += 1;
            self.worst_kink = self.worst_kink.max(err);
        } else {
            self.worst = self.worst.max(err);
        }
    }

    fn passed(&self) -> bool {
        self.worst < TOL && self.worst_kink < KINK_TOL
    }
}

pub fn run() -> Outcome {
    let mut tallies = Vec::new();
    for (group, cases) in [(0u64, primitive_cases()), (1, loss_cases())] {
        for (ci, c) in cases.iter().enumerate() {
            let mut tally = Tally {
                name: c.name,
                worst: 0.0,
                worst_kink: 0.0,
                kinks: 0,
            };
            for i in 0..INSTANCES as u64 {
                let mut rng = rng_for(0xFD, &[group, ci as u64, i]);
                let (inst, build) = (c.make)(&mut rng);
                let err = check_graph(&inst.shapes, &inst.values, rng.gen(), build.as_ref());
                tally.add(err, inst.kink);
            }
            tallies.push(tally);
        }
    }
    for (name, head) in [
        ("network + average pooling", Head::Gap),
        ("network + max pooling", Head::Gmp),
        ("network + importance sampling", Head::Sampled),
    ] {
        let mut tally = Tally {
            name,
            worst: 0.0,
            worst_kink: 0.0,
            kinks: 0,
        };
        for i in 0..INSTANCES as u64 {
            let (err, kink) = end_to_end(head, 1000 + i);
            tally.add(err, kink);
        }
        tallies.push(tally);
    }

    let worst = tallies.iter().fold(0.0f64, |m, t| m.max(t.worst));
    let worst_kink = tallies.iter().fold(0.0f64, |m, t| m.max(t.worst_kink));
    let kinks: usize = tallies.iter().map(|t| t.kinks).sum();
    let failed: Vec<String> = tallies
        .iter()
        .filter(|t| !t.passed())
        .map(|t| format!("{} ({:.2e}, kink {:.2e})", t.name, t.worst, t.worst_kink))
        .collect();
    let mut detail = format!(
        "{} checks x {INSTANCES} instances, h={STEP:e}: worst rel err {worst:.2e} (tol {TOL:e}), \
         {kinks} near-kink instances worst {worst_kink:.2e} (tol {KINK_TOL:e})",
        tallies.len()
    );
    if !failed.is_empty() {
        detail.push_str(&format!("; failing: {}", failed.join(", ")));
    }
    Outcome {
        passed: failed.is_empty(),
        detail,
    }
}
