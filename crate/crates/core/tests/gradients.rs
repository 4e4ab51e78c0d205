use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regnas::nn::{grad_check, grad_check_with, ForwardCache, Graph, NodeId, Tensor};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds a graph `input → (param layer) → f → outputs` and checks it on random data.
fn check(seed: u64, input_shape: &[usize], build: impl Fn(&mut Graph<f64>, NodeId) -> Vec<NodeId>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::<f64>::new();
    let x = g.input(0);
    let outs = build(&mut g, x);
    g.set_outputs(outs);
    g.init_params(&mut rng);
    // nonzero biases so relu/tanh inputs are not symmetric around zero
    for p in g.params_mut() {
        for v in p.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let input = random(input_shape, &mut rng);
    grad_check(&mut g, &[input], EPS).unwrap()
}

fn assert_all_instances(name: &str, input_shape: &[usize], build: impl Fn(&mut Graph<f64>, NodeId) -> Vec<NodeId>) {
    for seed in 0..20 {
        let err = check(seed, input_shape, &build);
        assert!(err < TOL, "{name} seed {seed}: rel err {err:e}");
    }
}

#[test]
fn conv2d_gradients() {
    assert_all_instances("conv3x3", &[2, 2, 5, 5], |g, x| vec![g.conv2d(x, 2, 3, 3, 1, 1)]);
    assert_all_instances("conv1x1", &[2, 3, 4, 4], |g, x| vec![g.conv2d(x, 3, 2, 1, 1, 0)]);
    assert_all_instances("conv strided", &[2, 2, 6, 6], |g, x| vec![g.conv2d(x, 2, 2, 3, 2, 1)]);
}

#[test]
fn pooling_and_pointwise_gradients() {
    assert_all_instances("avgpool", &[2, 2, 6, 6], |g, x| {
        let c = g.conv2d(x, 2, 2, 1, 1, 0);
        vec![g.avg_pool(c, 3, 1, 1)]
    });
    assert_all_instances("avgpool 2x2", &[2, 2, 6, 6], |g, x| {
        let c = g.conv2d(x, 2, 2, 1, 1, 0);
        vec![g.avg_pool(c, 2, 2, 0)]
    });
    assert_all_instances("relu", &[2, 2, 4, 4], |g, x| {
        let c = g.conv2d(x, 2, 2, 3, 1, 1);
        vec![g.relu(c)]
    });
    assert_all_instances("tanh", &[3, 4], |g, x| {
        let l = g.linear(x, 4, 3, true);
        vec![g.tanh(l)]
    });
    assert_all_instances("sigmoid", &[3, 4], |g, x| {
        let l = g.linear(x, 4, 3, true);
        vec![g.sigmoid(l)]
    });
    assert_all_instances("identity", &[3, 4], |g, x| {
        let l = g.linear(x, 4, 3, true);
        vec![g.identity(l)]
    });
}

#[test]
fn normalization_and_reduction_gradients() {
    assert_all_instances("batchnorm", &[3, 2, 4, 4], |g, x| {
        let c = g.conv2d(x, 2, 3, 3, 1, 1);
        vec![g.batch_norm(c, 3)]
    });
    assert_all_instances("global avgpool + linear", &[2, 3, 4, 4], |g, x| {
        let c = g.conv2d(x, 3, 4, 3, 1, 1);
        let p = g.global_avg_pool(c);
        vec![g.linear(p, 4, 5, true)]
    });
}

#[test]
fn merge_gradients() {
    assert_all_instances("add", &[3, 4], |g, x| {
        let a = g.linear(x, 4, 4, true);
        let b = g.linear(x, 4, 4, false);
        vec![g.add(&[a, b, x])]
    });
    assert_all_instances("mul", &[3, 4], |g, x| {
        let a = g.linear(x, 4, 4, true);
        let b = g.linear(x, 4, 4, false);
        vec![g.mul(a, b)]
    });
    assert_all_instances("shared linear", &[3, 4], |g, x| {
        let w = g.add_param(&[4, 4], Some(4));
        let a = g.linear_shared(x, w, None);
        let t = g.tanh(a);
        vec![g.linear_shared(t, w, None)]
    });
}

#[test]
fn conv_relu_pool_chain() {
    assert_all_instances("conv+relu+avgpool", &[2, 2, 6, 6], |g, x| {
        let c = g.conv2d(x, 2, 4, 3, 1, 1);
        let r = g.relu(c);
        vec![g.avg_pool(r, 2, 2, 0)]
    });
}

#[test]
fn linear_mean_loss_matches_closed_form() {
    let mut g = Graph::<f64>::new();
    let x = g.input(0);
    let y = g.linear(x, 3, 2, true);
    g.set_outputs(vec![y]);
    g.init_params(&mut ChaCha8Rng::seed_from_u64(5));
    let input = Tensor::from_vec(&[1, 3], vec![0.5, -1.0, 2.0]).unwrap();

    // loss = mean(y): dL/dW[o][i] = x[i] / 2, dL/db[o] = 1/2
    let mean = |c: &ForwardCache<f64>| {
        let o = c.output(0);
        let n = o.numel() as f64;
        Ok((o.data().iter().sum::<f64>() / n, vec![Tensor::full(o.shape(), 1.0 / n)]))
    };
    let cache = g.forward(std::slice::from_ref(&input)).unwrap();
    let grads = g.backward(&cache, &mean(&cache).unwrap().1).unwrap();
    assert_eq!(grads[0].data(), &[0.25, -0.5, 1.0, 0.25, -0.5, 1.0]);
    assert_eq!(grads[1].data(), &[0.5, 0.5]);

    let err = grad_check_with(&mut g, &[input], &mean, EPS, 16, 0).unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn parameterless_graph_reports_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.input(0);
    let r = g.relu(x);
    g.set_outputs(vec![r]);
    let input = Tensor::full(&[2, 2], 1.0);
    assert_eq!(grad_check(&mut g, &[input], EPS).unwrap(), 0.0);
}

#[test]
fn unrolled_rnn_gradients() {
    use regnas::rnn::{build_rnn, RnnGenotype};
    let gated: RnnGenotype = "linear_x:0|sigmoid:1|mul:2,3|tanh:4>5".parse().unwrap();
    for geno in [RnnGenotype::vanilla(), gated] {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = build_rnn::<f64>(&geno, 16, 3).unwrap();
            net.graph.init_params(&mut rng);
            let seq = random(&[3, 2, 16], &mut rng);
            let mut inputs = net.inputs(&seq).unwrap();
            inputs[0] = random(&[2, 16], &mut rng);
            let err = grad_check(&mut net.graph, &inputs, EPS).unwrap();
            assert!(err < TOL, "{geno} seed {seed}: rel err {err:e}");
        }
    }
}

#[test]
fn shared_weight_gradient_is_sum_over_steps() {
    use regnas::rnn::{build_rnn, RnnGenotype};
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut net = build_rnn::<f64>(&RnnGenotype::vanilla(), 16, 3).unwrap();
    net.graph.init_params(&mut rng);
    let inputs = net.inputs(&random(&[3, 2, 16], &mut rng)).unwrap();
    let cache = net.graph.forward(&inputs).unwrap();
    let ones: Vec<Tensor<f64>> = cache.outputs().iter().map(|o| Tensor::full(o.shape(), 1.0)).collect();
    let full = net.graph.backward(&cache, &ones).unwrap();
    // supervising one step at a time and summing must give the same gradient
    let mut summed = vec![0.0; full[0].numel()];
    for t in 0..3 {
        let grads: Vec<Tensor<f64>> = cache
            .outputs()
            .iter()
            .enumerate()
            .map(|(s, o)| Tensor::full(o.shape(), if s == t { 1.0 } else { 0.0 }))
            .collect();
        let g = net.graph.backward(&cache, &grads).unwrap();
        for (acc, v) in summed.iter_mut().zip(g[0].data()) {
            *acc += v;
        }
    }
    for (a, b) in summed.iter().zip(full[0].data()) {
        assert!((a - b).abs() < 1e-12);
    }
}
