#![allow(dead_code)]

use cellprop::graphcut::FlowGraph;
use cellprop::nn::{LayerSpec, Network, Node};
use cellprop::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn randomize(net: &mut Network, rng: &mut impl Rng) {
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
}

fn conv(i: usize, o: usize, k: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels: i,
        out_channels: o,
        kernel: k,
    }
}

/// A small random network, optionally containing ReLUs, pooling and a skip
/// connection. Returns the network and its input shape.
pub fn random_net(rng: &mut impl Rng, with_relu: bool) -> (Network, Vec<usize>) {
    let cin = rng.random_range(1..=2);
    let size = 2 * rng.random_range(2..=3);
    let c1 = rng.random_range(1..=3);
    let c2 = rng.random_range(1..=3);
    let k1 = [1, 3][rng.random_range(0..2)];
    let k2 = [1, 3][rng.random_range(0..2)];
    let mut nodes = Vec::new();
    let mut push = |spec: LayerSpec, inputs: Vec<usize>| {
        nodes.push(Node { spec, inputs });
        nodes.len()
    };
    let mut v = push(conv(cin, c1, k1), vec![0]);
    if with_relu {
        v = push(LayerSpec::Relu, vec![v]);
    }
    let skip = v;
    let pooled = rng.random_bool(0.5);
    if pooled {
        v = push(LayerSpec::MaxPool2x2, vec![v]);
    }
    v = push(conv(c1, c2, k2), vec![v]);
    if with_relu {
        v = push(LayerSpec::Relu, vec![v]);
    }
    if pooled {
        v = push(LayerSpec::Upsample2x, vec![v]);
    }
    let c_out = if rng.random_bool(0.5) {
        v = push(LayerSpec::Concat, vec![v, skip]);
        c1 + c2
    } else {
        c2
    };
    push(LayerSpec::OutputHead { in_channels: c_out }, vec![v]);
    let mut net = Network::new(cin, nodes).unwrap();
    randomize(&mut net, rng);
    (net, vec![cin, size, size])
}

/// Network built only from linear layers (conv, concat, upsample, head).
pub fn relu_free_net(rng: &mut impl Rng) -> (Network, Vec<usize>) {
    let cin = rng.random_range(1..=2);
    let size = 2 * rng.random_range(2..=4);
    let c1 = rng.random_range(1..=3);
    let k = [1, 3, 5][rng.random_range(0..3)];
    let nodes = vec![
        Node { spec: conv(cin, c1, k), inputs: vec![0] },
        Node { spec: conv(c1, c1, 3), inputs: vec![1] },
        Node { spec: LayerSpec::Concat, inputs: vec![2, 0] },
        Node { spec: LayerSpec::OutputHead { in_channels: c1 + cin }, inputs: vec![3] },
    ];
    let mut net = Network::new(cin, nodes).unwrap();
    randomize(&mut net, rng);
    (net, vec![cin, size, size])
}

/// Linear loss `sum(out * r)` and its gradient `r`.
pub fn linear_loss(net: &Network, x: &Tensor, r: &Tensor) -> f64 {
    let y = net.forward(x).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub struct GradCheck {
    pub checked: usize,
    pub skipped: usize,
    pub worst: f64,
}

/// Compare analytic parameter gradients of a linear loss with central
/// differences. Coordinates where the two one-sided differences disagree sit
/// on a kink (ReLU or pooling switch) and are skipped.
pub fn grad_check(net: &Network, x: &Tensor, r: &Tensor, h: f64) -> GradCheck {
    let (_, trace) = net.forward_traced(x).unwrap();
    let grads = net.backward_train(&trace, r).unwrap();
    let base = linear_loss(net, x, r);
    let mut out = GradCheck {
        checked: 0,
        skipped: 0,
        worst: 0.0,
    };
    let mut probe = net.clone();
    for (li, g) in grads.params.iter().enumerate() {
        for (pi, &analytic) in g.iter().enumerate() {
            let orig = *net.params()[li].iter().nth(pi).unwrap();
            let mut at = |v: f64| {
                *probe.params_mut()[li].iter_mut().nth(pi).unwrap() = v;
                linear_loss(&probe, x, r)
            };
            let up = at(orig + h);
            let down = at(orig - h);
            at(orig);
            let fwd = (up - base) / h;
            let bwd = (base - down) / h;
            if (fwd - bwd).abs() > 1e-4 * fwd.abs().max(bwd.abs()).max(1e-3) {
                out.skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            out.worst = out.worst.max(err);
            out.checked += 1;
        }
    }
    out
}

/// Random flow graph with integer capacities; node 0 is the source and the
/// last node the sink.
pub fn random_graph(rng: &mut impl Rng, max_nodes: usize) -> FlowGraph {
    let n = rng.random_range(2..=max_nodes);
    let mut g = FlowGraph::new(n, 0, n - 1);
    for a in 0..n {
        for b in 0..n {
            if a != b && rng.random_bool(0.4) {
                g.add_arc(a, b, rng.random_range(0..=10) as f64);
            }
        }
    }
    g
}

/// Minimum cut capacity by enumerating every source-side node set.
pub fn brute_min_cut(g: &FlowGraph) -> f64 {
    let n = g.nodes();
    let inner: Vec<usize> = (0..n).filter(|&v| v != g.source() && v != g.sink()).collect();
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << inner.len()) {
        let mut side = vec![false; n];
        side[g.source()] = true;
        for (b, &v) in inner.iter().enumerate() {
            side[v] = mask >> b & 1 == 1;
        }
        best = best.min(g.cut_capacity(&side));
    }
    best
}

/// Per-pixel argmax written as plainly as possible.
pub fn brute_projection(raw: &[cellprop::Plane]) -> Vec<cellprop::Plane> {
    let (w, h) = raw[0].dims();
    let mut out: Vec<_> = raw.iter().map(|_| cellprop::Plane::zeros(w, h)).collect();
    for y in 0..h {
        for x in 0..w {
            let mut best_k = 0;
            let mut best_v = raw[0].get(x, y);
            for (k, p) in raw.iter().enumerate() {
                if p.get(x, y) > best_v {
                    best_v = p.get(x, y);
                    best_k = k;
                }
            }
            out[best_k].set(x, y, best_v);
        }
    }
    out
}
