//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any criterion fails.
//!
//! The Kaggle reproduction (criterion 7) runs only when
//! `DRIVENET_KAGGLE_MANIFEST` points at a manifest of the 22,425 labelled
//! training frames; otherwise it reports SKIP.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use drivenet::cascade::CascadeConfig;
use drivenet::cnn::{Architecture, DriveNetCnn, Mode, TrainConfig, PARAM_NAMES};
use drivenet::dataset::{kfold_split, synth_dataset, write_synth_dataset, SynthSpec};
use drivenet::forest::{
    grow_tree, split_score, train_forest, DecisionTree, ForestConfig, Node, Projection, RandomForest, SplitTest,
};
use drivenet::kernels::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout, dropout_backward, global_maxpool_forward,
    maxpool2x2_forward, maxpool_backward, relu_backward, softmax_cross_entropy,
};
use drivenet::metrics::crossval;
use drivenet::rng::Rng;
use drivenet::tensor::Tensor;
use drivenet::{FeatureMatrix, NUM_CLASSES};
use drivenet_cli::{cmd_crossval, cmd_train, RunConfig};

type Outcome = Result<String, String>;

const H: f64 = 1e-3;
const SEEDS: u64 = 20;

// ---------- 64-bit reference implementations ----------

fn to64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.uniform_f32() * 2.0 - 1.0).collect()
}

fn rand_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::new(shape, rand_vec(rng, shape.iter().product())).unwrap()
}

/// Valid cross-correlation; `x [c,h,w]`, `k [o,c,kh,kw]`.
fn conv64(x: &[f64], (c, h, w): (usize, usize, usize), k: &[f64], (o, kh, kw): (usize, usize, usize), b: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0.0; o * oh * ow];
    for f in 0..o {
        for y in 0..oh {
            for xx in 0..ow {
                let mut s = b[f];
                for ch in 0..c {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            s += x[(ch * h + y + dy) * w + xx + dx] * k[((f * c + ch) * kh + dy) * kw + dx];
                        }
                    }
                }
                out[(f * oh + y) * ow + xx] = s;
            }
        }
    }
    out
}

/// 2x2 max pool; also returns the winning flat index of each window.
fn pool64(x: &[f64], (c, h, w): (usize, usize, usize)) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = (f64::NEG_INFINITY, 0);
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let i = (ch * h + 2 * y + dy) * w + 2 * xx + dx;
                    if x[i] > best.0 {
                        best = (x[i], i);
                    }
                }
                out.push(best.0);
                arg.push(best.1);
            }
        }
    }
    (out, arg)
}

fn gmp64(x: &[f64], c: usize) -> (Vec<f64>, Vec<usize>) {
    let n = x.len() / c;
    (0..c)
        .map(|ch| {
            let mut best = (f64::NEG_INFINITY, 0);
            for i in ch * n..(ch + 1) * n {
                if x[i] > best.0 {
                    best = (x[i], i);
                }
            }
            best
        })
        .unzip()
}

fn dense64(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(m, &bm)| bm + x.iter().enumerate().map(|(n, xn)| w[m * x.len() + n] * xn).sum::<f64>())
        .collect()
}

fn xent64(z: &[f64], label: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    lse - z[label]
}

/// Central differences; coordinates where `valid` rejects either side are
/// skipped.
fn central(x: &[f64], f: impl Fn(&[f64]) -> f64, valid: impl Fn(&[f64]) -> bool) -> Vec<Option<f64>> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + H;
            let ok_plus = valid(&p);
            let fp = f(&p);
            p[i] = x[i] - H;
            let ok_minus = valid(&p);
            let fm = f(&p);
            p[i] = x[i];
            (ok_plus && ok_minus).then(|| (fp - fm) / (2.0 * H))
        })
        .collect()
}

/// `max |a - n| / max |n|` over checked coordinates.
fn rel_err(analytic: &[f32], numeric: &[Option<f64>]) -> f64 {
    let (mut d, mut s) = (0.0f64, 0.0f64);
    for (a, n) in analytic.iter().zip(numeric) {
        if let Some(n) = n {
            d = d.max((*a as f64 - n).abs());
            s = s.max(n.abs());
        }
    }
    d / s.max(1e-12)
}

fn fd(x: &[f64], analytic: &[f32], f: impl Fn(&[f64]) -> f64) -> f64 {
    rel_err(analytic, &central(x, f, |_| true))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------- criterion 1: gradients ----------

fn kernel_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::new(1000 + seed);
    let mut out = Vec::new();

    // conv2d
    let (ishape, kshape) = ((2, 7, 6), (3, 3, 2));
    let x = rand_tensor(&mut rng, &[2, 7, 6]);
    let k = rand_tensor(&mut rng, &[3, 2, 3, 2]);
    let b = rand_tensor(&mut rng, &[3]);
    let go = rand_tensor(&mut rng, &[3, 5, 5]);
    let y = conv2d_forward(&x, &k, &b).unwrap();
    let naive = conv64(&to64(&x), ishape, &to64(&k), kshape, &to64(&b));
    let fwd = y.data().iter().zip(&naive).map(|(a, n)| (*a as f64 - n).abs()).fold(0.0, f64::max);
    out.push(("conv2d forward (abs)", fwd));
    let g = conv2d_backward(&x, &k, &go).unwrap();
    let (x64, k64, b64, go64) = (to64(&x), to64(&k), to64(&b), to64(&go));
    out.push(("conv2d d/input", fd(&x64, g.input.data(), |v| dot(&conv64(v, ishape, &k64, kshape, &b64), &go64))));
    out.push(("conv2d d/kernels", fd(&k64, g.kernels.data(), |v| dot(&conv64(&x64, ishape, v, kshape, &b64), &go64))));
    out.push(("conv2d d/bias", fd(&b64, g.bias.data(), |v| dot(&conv64(&x64, ishape, &k64, kshape, v), &go64))));

    // maxpool 2x2
    let shape = (3, 6, 8);
    let x = rand_tensor(&mut rng, &[3, 6, 8]);
    let go = rand_tensor(&mut rng, &[3, 3, 4]);
    let (_, idx) = maxpool2x2_forward(&x).unwrap();
    let g = maxpool_backward(&idx, &go).unwrap();
    let (x64, go64) = (to64(&x), to64(&go));
    let winners = pool64(&x64, shape).1;
    let e = rel_err(
        g.data(),
        &central(&x64, |v| dot(&pool64(v, shape).0, &go64), |v| pool64(v, shape).1 == winners),
    );
    out.push(("maxpool2x2", e));

    // global max pool
    let x = rand_tensor(&mut rng, &[4, 5, 3]);
    let go = rand_tensor(&mut rng, &[4]);
    let (_, idx) = global_maxpool_forward(&x).unwrap();
    let g = maxpool_backward(&idx, &go).unwrap();
    let (x64, go64) = (to64(&x), to64(&go));
    let winners = gmp64(&x64, 4).1;
    let e = rel_err(g.data(), &central(&x64, |v| dot(&gmp64(v, 4).0, &go64), |v| gmp64(v, 4).1 == winners));
    out.push(("global maxpool", e));

    // relu
    let x = rand_tensor(&mut rng, &[40]);
    let go = rand_tensor(&mut rng, &[40]);
    let g = relu_backward(&x, &go).unwrap();
    let (x64, go64) = (to64(&x), to64(&go));
    let signs: Vec<bool> = x64.iter().map(|&v| v > 0.0).collect();
    let r = |v: &[f64]| v.iter().zip(&go64).map(|(a, b)| a.max(0.0) * b).sum::<f64>();
    let e = rel_err(g.data(), &central(&x64, r, |v| v.iter().map(|&a| a > 0.0).collect::<Vec<_>>() == signs));
    out.push(("relu", e));

    // dropout with a fixed mask
    let x = rand_tensor(&mut rng, &[64]);
    let go = rand_tensor(&mut rng, &[64]);
    let (_, mask) = dropout(&x, 0.5, &mut rng, true).unwrap();
    let g = dropout_backward(&mask, &go).unwrap();
    let (x64, go64) = (to64(&x), to64(&go));
    let keep: Vec<f64> = mask.keep.iter().map(|&k| if k { mask.scale as f64 } else { 0.0 }).collect();
    let e = fd(&x64, g.data(), |v| v.iter().zip(&keep).zip(&go64).map(|((a, m), g)| a * m * g).sum());
    out.push(("dropout", e));

    // dense
    let x = rand_tensor(&mut rng, &[7]);
    let w = rand_tensor(&mut rng, &[5, 7]);
    let b = rand_tensor(&mut rng, &[5]);
    let go = rand_tensor(&mut rng, &[5]);
    let g = dense_backward(&x, &w, &go).unwrap();
    let _ = dense_forward(&x, &w, &b).unwrap();
    let (x64, w64, b64, go64) = (to64(&x), to64(&w), to64(&b), to64(&go));
    out.push(("dense d/input", fd(&x64, g.input.data(), |v| dot(&dense64(v, &w64, &b64), &go64))));
    out.push(("dense d/weights", fd(&w64, g.weights.data(), |v| dot(&dense64(&x64, v, &b64), &go64))));
    out.push(("dense d/bias", fd(&b64, g.bias.data(), |v| dot(&dense64(&x64, &w64, v), &go64))));

    // softmax cross-entropy
    let z = Tensor::new(&[10], rand_vec(&mut rng, 10).iter().map(|v| v * 4.0).collect()).unwrap();
    let label = (seed % 10) as usize;
    let (_, g) = softmax_cross_entropy(&z, label).unwrap();
    out.push(("softmax xent", fd(&to64(&z), g.data(), |v| xent64(v, label))));
    out
}

fn reduced_arch() -> Architecture {
    // 12x16 -> conv3 10x14 -> pool 5x7 -> conv2 4x6 -> pool 2x3
    Architecture {
        input_height: 12,
        input_width: 16,
        conv1_channels: 4,
        conv1_kernel: 3,
        conv2_channels: 6,
        conv2_kernel: 2,
        dense_width: 8,
        n_classes: 10,
    }
}

/// Inference-mode loss of the reduced network in f64, plus the routing
/// signature (pool winners, ReLU signs, global-pool winners) that must not
/// change inside a finite-difference step.
fn net64(a: &Architecture, p: &[Vec<f64>], x: &[f64], label: usize) -> (f64, Vec<usize>) {
    let (c1, c2, d) = (a.conv1_channels, a.conv2_channels, a.dense_width);
    let (h0, w0) = (a.input_height, a.input_width);
    let (k1, k2) = (a.conv1_kernel, a.conv2_kernel);
    let a1 = conv64(x, (1, h0, w0), &p[0], (c1, k1, k1), &p[1]);
    let (h1, w1) = (h0 - k1 + 1, w0 - k1 + 1);
    let (p1, i1) = pool64(&a1, (c1, h1, w1));
    let (h1, w1) = (h1 / 2, w1 / 2);
    let a2 = conv64(&p1, (c1, h1, w1), &p[2], (c2, k2, k2), &p[3]);
    let (h2, w2) = (h1 - k2 + 1, w1 - k2 + 1);
    let (p2, i2) = pool64(&a2, (c2, h2, w2));
    let r2: Vec<f64> = p2.iter().map(|v| v.max(0.0)).collect();
    let (h2, w2) = (h2 / 2, w2 / 2);
    let a3 = conv64(&r2, (c2, h2, w2), &p[4], (d, 1, 1), &p[5]);
    let r3: Vec<f64> = a3.iter().map(|v| v.max(0.0)).collect();
    let (feat, ig) = gmp64(&r3, d);
    let logits = dense64(&feat, &p[6], &p[7]);
    let mut sig = i1;
    sig.extend(i2);
    sig.extend(p2.iter().map(|&v| usize::from(v > 0.0)));
    sig.extend(a3.iter().map(|&v| usize::from(v > 0.0)));
    sig.extend(ig);
    (xent64(&logits, label), sig)
}

fn composed_error(seed: u64) -> (f64, usize, usize) {
    let arch = reduced_arch();
    let mut rng = Rng::new(5000 + seed);
    let mut net = DriveNetCnn::build(arch, seed).unwrap();
    // move the head off its near-zero init so every layer carries signal
    for p in net.params_mut() {
        for v in p.data_mut() {
            *v += (rng.uniform_f32() * 2.0 - 1.0) * 0.3;
        }
    }
    let image = Tensor::from_fn(&arch.input_shape(), |_| rng.uniform_f32());
    let label = (seed % 10) as usize;
    let (_, _, grads) = net.loss_and_grad(&image, label, Mode::Inference).unwrap();
    let params: Vec<Vec<f64>> = net.params().iter().map(to64).collect();
    let x64 = to64(&image);
    let base_sig = net64(&arch, &params, &x64, label).1;
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    for (t, grad) in grads.iter().enumerate() {
        let f = |v: &[f64]| {
            let mut q = params.clone();
            q[t] = v.to_vec();
            net64(&arch, &q, &x64, label)
        };
        let numeric = central(&params[t], |v| f(v).0, |v| f(v).1 == base_sig);
        checked += numeric.iter().filter(|n| n.is_some()).count();
        skipped += numeric.iter().filter(|n| n.is_none()).count();
        let e = rel_err(grad.data(), &numeric);
        assert!(e.is_finite(), "{}", PARAM_NAMES[t]);
        worst = worst.max(e);
    }
    (worst, checked, skipped)
}

fn criterion_1() -> Outcome {
    let mut worst_kernel = ("", 0.0f64);
    for seed in 0..SEEDS {
        for (name, e) in kernel_errors(seed) {
            let limit = if name.ends_with("(abs)") { 1e-5 } else { 1e-4 };
            if !(e < limit) {
                return Err(format!("{name} seed {seed}: error {e:.3e} >= {limit:e}"));
            }
            if e > worst_kernel.1 && !name.ends_with("(abs)") {
                worst_kernel = (name, e);
            }
        }
    }
    let mut worst_net = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    for seed in 0..SEEDS {
        let (e, c, s) = composed_error(seed);
        checked += c;
        skipped += s;
        if !(e < 1e-3) {
            return Err(format!("reduced network seed {seed}: error {e:.3e} >= 1e-3"));
        }
        worst_net = worst_net.max(e);
    }
    Ok(format!(
        "{SEEDS} seeds; worst kernel rel. error {:.2e} ({}) < 1e-4; reduced 12x16 network worst {worst_net:.2e} < 1e-3 \
         ({checked} coordinates, {skipped} kink-crossing skipped)",
        worst_kernel.1, worst_kernel.0
    ))
}

// ---------- criterion 2: stump vs brute force ----------

fn entropy_bits(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            p * p.log2()
        })
        .sum::<f64>()
}

fn partition_score(left: &[usize], right: &[usize]) -> f64 {
    let (nl, nr) = (left.iter().sum::<usize>() as f64, right.iter().sum::<usize>() as f64);
    -(nl * entropy_bits(left) + nr * entropy_bits(right)) / (nl + nr)
}

fn criterion_2() -> Outcome {
    let mut rng = Rng::new(77);
    let config = ForestConfig {
        n_trees: 1,
        max_depth: 1,
        n_candidate_tests: 64,
        n_features_per_test: 1,
        min_gain: 0.0,
        min_samples_leaf: 1,
        seed: 0,
    };
    let (mut ties, mut leaves) = (0, 0);
    for inst in 0..100 {
        let n = 2 + (rng.uniform_f32() * 19.0) as usize;
        let n_classes = 2 + inst % 3;
        // coarse grid values so duplicate feature values occur
        let data: Vec<f32> = (0..2 * n).map(|_| (rng.uniform_f32() * 8.0).floor() * 0.5).collect();
        let labels: Vec<usize> = (0..n).map(|_| (rng.uniform_f32() * n_classes as f32) as usize).collect();
        let features = FeatureMatrix::new(n, 2, data);
        let counts_of = |idx: &mut dyn Iterator<Item = usize>| {
            let mut c = [0usize; NUM_CLASSES];
            idx.for_each(|i| c[labels[i]] += 1);
            c
        };

        let mut brute: Vec<(f64, usize)> = Vec::new();
        for f in 0..2 {
            let mut vals: Vec<f32> = (0..n).map(|i| features.row(i)[f]).collect();
            vals.sort_by(f32::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let th = (w[0] + w[1]) / 2.0;
                let left = counts_of(&mut (0..n).filter(|&i| features.row(i)[f] > th));
                let right = counts_of(&mut (0..n).filter(|&i| features.row(i)[f] <= th));
                brute.push((partition_score(&left, &right), f));
            }
        }
        let pure = labels.iter().all(|&l| l == labels[0]);
        let idx: Vec<usize> = (0..n).collect();
        let tree = grow_tree(&features, &labels, &idx, &config, &mut Rng::new(inst as u64)).map_err(|e| e.to_string())?;
        let root = &tree.nodes()[0];
        if brute.is_empty() || pure {
            if !matches!(root, Node::Leaf { .. }) {
                return Err(format!("instance {inst}: expected a leaf"));
            }
            leaves += 1;
            continue;
        }
        let best = brute.iter().map(|b| b.0).fold(f64::NEG_INFINITY, f64::max);
        let best_features: BTreeSet<usize> = brute.iter().filter(|b| (b.0 - best).abs() < 1e-12).map(|b| b.1).collect();
        let Node::Split { test, .. } = root else {
            return Err(format!("instance {inst}: stump is a leaf but a split scoring {best} exists"));
        };
        let f = test.projection.feature_indices[0] as usize;
        let left = counts_of(&mut (0..n).filter(|&i| test.goes_left(features.row(i))));
        let right = counts_of(&mut (0..n).filter(|&i| !test.goes_left(features.row(i))));
        let got = partition_score(&left, &right);
        let lib = split_score(&left, &right).map_err(|e| e.to_string())?;
        if (got - best).abs() > 1e-12 || (lib - best).abs() > 1e-12 {
            return Err(format!("instance {inst}: stump score {got} (library {lib}) vs brute force {best}"));
        }
        if !best_features.contains(&f) {
            return Err(format!("instance {inst}: stump chose feature {f}, brute force best {best_features:?}"));
        }
        ties += usize::from(best_features.len() > 1);
    }
    Ok(format!(
        "100 instances: score and feature match exhaustive search ({leaves} unsplittable, {ties} with both features optimal)"
    ))
}

// ---------- criterion 3: entropy, split scores, posterior averaging ----------

fn random_tree(rng: &mut Rng, dim: usize, depth: usize) -> DecisionTree {
    fn build(rng: &mut Rng, dim: usize, depth: usize, nodes: &mut Vec<Node>) -> u32 {
        let slot = nodes.len();
        let mut posterior = [0.0; NUM_CLASSES];
        posterior.iter_mut().for_each(|p| *p = rng.uniform_f64());
        let total: f64 = posterior.iter().sum();
        posterior.iter_mut().for_each(|p| *p /= total);
        nodes.push(Node::Leaf { posterior });
        if depth > 0 && rng.uniform_f32() < 0.7 {
            let f = (rng.uniform_f32() * dim as f32) as u32 % dim as u32;
            let test = SplitTest {
                projection: Projection::new(vec![f], vec![1.0]).unwrap(),
                threshold: rng.uniform_f32() * 2.0 - 1.0,
            };
            let left = build(rng, dim, depth - 1, nodes);
            let right = build(rng, dim, depth - 1, nodes);
            nodes[slot] = Node::Split { test, left, right };
        }
        slot as u32
    }
    let mut nodes = Vec::new();
    build(rng, dim, depth, &mut nodes);
    DecisionTree::from_nodes(nodes, dim).unwrap()
}

fn route<'a>(tree: &'a DecisionTree, x: &[f32]) -> &'a [f64; NUM_CLASSES] {
    let mut i = 0usize;
    loop {
        match &tree.nodes()[i] {
            Node::Split { test, left, right } => {
                let p = &test.projection;
                let v: f32 = p.feature_indices.iter().zip(&p.weights).map(|(&j, &w)| w * x[j as usize]).sum();
                i = if v > test.threshold { *left } else { *right } as usize;
            }
            Node::Leaf { posterior } => return posterior,
        }
    }
}

fn criterion_3() -> Outcome {
    use drivenet::forest::entropy;
    let e = |pairs: &[(usize, usize)]| {
        let mut c = [0usize; NUM_CLASSES];
        pairs.iter().for_each(|&(k, n)| c[k] = n);
        entropy(&c).unwrap()
    };
    let (e1, e0, e8) = (e(&[(0, 5), (1, 5)]), e(&[(0, 10)]), e(&[(0, 3), (1, 1)]));
    if e1 != 1.0 || e0 != 0.0 || (e8 - 0.811278).abs() > 5e-7 {
        return Err(format!("entropy values {e1} {e0} {e8}"));
    }
    let mut a = [0usize; NUM_CLASSES];
    let mut b = [0usize; NUM_CLASSES];
    a[0] = 4;
    b[1] = 4;
    let pure = split_score(&a, &b).unwrap();
    let mut q = [0usize; NUM_CLASSES];
    q[0] = 3;
    q[1] = 1;
    let degenerate = split_score(&q, &[0; NUM_CLASSES]).unwrap();
    if pure != 0.0 || degenerate != -e8 {
        return Err(format!("split scores: pure {pure}, degenerate {degenerate} vs {}", -e8));
    }
    let (mut l, mut r) = ([0usize; NUM_CLASSES], [0usize; NUM_CLASSES]);
    (l[0], l[1], r[0], r[1]) = (3, 1, 1, 3);
    if (split_score(&l, &r).unwrap() + 0.811278).abs() > 5e-7 {
        return Err("split score [3,1]/[1,3]".into());
    }

    let mut rng = Rng::new(31);
    let dim = 6;
    let mut compared = 0;
    for _ in 0..200 {
        let n_trees = 1 + (rng.uniform_f32() * 5.0) as usize % 5;
        let trees: Vec<DecisionTree> = (0..n_trees).map(|_| random_tree(&mut rng, dim, 3)).collect();
        let forest = RandomForest::from_trees(dim, trees).unwrap();
        for _ in 0..10 {
            let x: Vec<f32> = rand_vec(&mut rng, dim);
            let mut mean = [0.0f64; NUM_CLASSES];
            for t in forest.trees() {
                for (m, p) in mean.iter_mut().zip(route(t, &x)) {
                    *m += p / n_trees as f64;
                }
            }
            let mut class = 0;
            for c in 1..NUM_CLASSES {
                if mean[c] > mean[class] {
                    class = c;
                }
            }
            let (got_class, got) = forest.predict(&x).unwrap();
            let diff = got.iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if got_class != class || diff > 1e-12 {
                return Err(format!("forest of {n_trees}: class {got_class} vs {class}, posterior diff {diff:e}"));
            }
            compared += 1;
        }
    }

    let n = 300;
    let data: Vec<f32> = rand_vec(&mut rng, n * 16);
    let labels: Vec<usize> = (0..n).map(|_| (rng.uniform_f32() * 10.0) as usize % 10).collect();
    let forest = train_forest(&FeatureMatrix::new(n, 16, data), &labels, &ForestConfig { n_trees: 25, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let x: Vec<f32> = rand_vec(&mut rng, 16).iter().map(|v| v * 3.0).collect();
        let (_, p) = forest.predict(&x).unwrap();
        if p.iter().any(|&v| v < 0.0) {
            return Err("negative posterior".into());
        }
        worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    if worst > 1e-5 {
        return Err(format!("posterior sum deviates by {worst:e}"));
    }
    Ok(format!(
        "entropy 1.0/0.0/{e8:.6}; pure and degenerate split scores exact; {compared} forest predictions match direct \
         averaging; posterior sums within {worst:.1e} of 1 on 10^4 inputs"
    ))
}

// ---------- criterion 4: desk-scale cross-validation ----------

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let samples = synth_dataset(&SynthSpec { per_class: 20, noise_sigma: 0.05, seed: 2017 }).map_err(|e| e.to_string())?;
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let config = CascadeConfig {
        train: TrainConfig { epochs: 10, ..Default::default() },
        ..Default::default()
    };
    let result = crossval(&images, &labels, 5, &config, 2017, |_, _| {}).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let acc = result.pooled.accuracy;
    let msg = format!(
        "5-fold, 10 epochs, default hyperparameters: pooled accuracy {acc:.4} ({}/{}) in {:.1}s",
        result.pooled.correct(),
        result.pooled.n_samples,
        elapsed.as_secs_f64()
    );
    if acc >= 0.95 && elapsed < Duration::from_secs(600) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

// ---------- criterion 5: protocol properties ----------

fn criterion_5() -> Outcome {
    let plan = kfold_split(22_425, 5, 0).map_err(|e| e.to_string())?;
    if plan.fold_sizes() != vec![4485; 5] {
        return Err(format!("22425/5 fold sizes {:?}", plan.fold_sizes()));
    }
    let mut rng = Rng::new(3);
    for _ in 0..200 {
        let n = 5 + (rng.uniform_f32() * 500.0) as usize;
        for k in 2..=5 {
            let plan = kfold_split(n, k, rng.uniform_f64().to_bits()).map_err(|e| e.to_string())?;
            let sizes = plan.fold_sizes();
            if sizes.iter().max().unwrap() - sizes.iter().min().unwrap() > 1 {
                return Err(format!("n={n} k={k}: sizes {sizes:?}"));
            }
        }
    }
    let samples = synth_dataset(&SynthSpec { per_class: 2, noise_sigma: 0.05, seed: 5 }).map_err(|e| e.to_string())?;
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let config = CascadeConfig {
        architecture: Architecture { conv1_channels: 4, conv2_channels: 8, dense_width: 16, ..Default::default() },
        train: TrainConfig { epochs: 1, batch_size: 8, ..Default::default() },
        forest: ForestConfig { n_trees: 5, ..Default::default() },
        ..Default::default()
    };
    for k in 2..=5 {
        let r = crossval(&images, &labels, k, &config, 40 + k as u64, |_, _| {}).map_err(|e| e.to_string())?;
        let mut seen = vec![0usize; images.len()];
        for f in &r.folds {
            f.test_indices.iter().for_each(|&i| seen[i] += 1);
        }
        let sizes: Vec<usize> = r.folds.iter().map(|f| f.test_indices.len()).collect();
        if seen.iter().any(|&c| c != 1) || r.pooled.n_samples != images.len() {
            return Err(format!("k={k}: pooled report does not cover every sample once"));
        }
        if sizes.iter().max().unwrap() - sizes.iter().min().unwrap() > 1 {
            return Err(format!("k={k}: fold sizes {sizes:?}"));
        }
    }
    Ok("22425/5 -> 4485 per fold; fold sizes differ by <= 1; pooled reports cover each sample once for k = 2..5".into())
}

// ---------- criterion 6: determinism ----------

fn criterion_6() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_synth_dataset(&dir.path().join("data"), &SynthSpec { per_class: 4, noise_sigma: 0.05, seed: 8 })
        .map_err(|e| e.to_string())?;
    let text = "manifest = \"data/manifest.csv\"\noutput_dir = \"OUT\"\nseed = 99\nepochs = 4\nbatch_size = 16\nstrict = true\n";
    let mut outputs = Vec::new();
    for (name, threads) in [("one", 1), ("four", 4)] {
        let config = RunConfig::parse(&text.replace("OUT", name), dir.path()).map_err(|e| e.to_string())?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| cmd_train(&config)).map_err(|e| e.to_string())?;
        outputs.push(std::fs::read(dir.path().join(name).join("model.drvn")).map_err(|e| e.to_string())?);
    }
    if outputs[0] != outputs[1] {
        return Err("cmd_train model files differ between runs".into());
    }

    let mut rng = Rng::new(4);
    let data = rand_vec(&mut rng, 120 * 32);
    let labels: Vec<usize> = (0..120).map(|i| i % 10).collect();
    let features = FeatureMatrix::new(120, 32, data);
    let config = ForestConfig { n_trees: 24, seed: 13, ..Default::default() };
    let forests: Vec<RandomForest> = [1, 2, 4]
        .iter()
        .map(|&t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| train_forest(&features, &labels, &config).unwrap())
        })
        .collect();
    if forests.windows(2).any(|w| w[0] != w[1]) {
        return Err("forest depends on thread count".into());
    }
    Ok(format!(
        "two strict cmd_train runs (1 and 4 threads) wrote identical {}-byte model files; forest identical under 1/2/4 threads",
        outputs[0].len()
    ))
}

// ---------- criterion 7: Kaggle reproduction (gated) ----------

enum Gated {
    Ran(Outcome),
    Skipped(String),
}

fn criterion_7() -> Gated {
    let Ok(manifest) = std::env::var("DRIVENET_KAGGLE_MANIFEST") else {
        return Gated::Skipped("DRIVENET_KAGGLE_MANIFEST not set; the Kaggle frames are an external download".into());
    };
    let out = std::env::var("DRIVENET_KAGGLE_OUT").unwrap_or_else(|_| "kaggle_crossval".into());
    let text = format!("manifest = {:?}\noutput_dir = {:?}\nseed = 2017\nk = 5\n", manifest, out);
    let run = || -> Result<String, String> {
        let config = RunConfig::parse(&text, Path::new("")).map_err(|e| e.to_string())?;
        let n = std::fs::read_to_string(&config.manifest).map_err(|e| e.to_string())?.lines().count().saturating_sub(1);
        if n != 22_425 {
            return Err(format!("manifest has {n} rows, the protocol needs all 22425"));
        }
        let summary = cmd_crossval(&config).map_err(|e| e.to_string())?;
        println!("{summary}");
        let line = summary.lines().find(|l| l.starts_with("Drive-Net")).unwrap_or("").to_string();
        Ok(format!("full k=5 protocol ran; {line} (recorded, not asserted); reports in {out}"))
    };
    Gated::Ran(run())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("1 gradient checks", criterion_1),
        ("2 stump vs brute-force split search", criterion_2),
        ("3 entropy / split score / posterior averaging", criterion_3),
        ("4 desk-scale 5-fold cross-validation", criterion_4),
        ("5 k-fold protocol properties", criterion_5),
        ("6 determinism", criterion_6),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS  criterion {name} [{secs:.1}s]: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  criterion {name} [{secs:.1}s]: {msg}");
            }
        }
    }
    match criterion_7() {
        Gated::Skipped(why) => println!("SKIP  criterion 7 Kaggle reproduction: {why}"),
        Gated::Ran(Ok(msg)) => println!("PASS  criterion 7 Kaggle reproduction: {msg}"),
        Gated::Ran(Err(msg)) => {
            failed += 1;
            println!("FAIL  criterion 7 Kaggle reproduction: {msg}");
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
