use salbench::fusion::{adfnet_forward, adfnet_init, loss_and_grads, train_step, AdfNetToy, NetConfig};
use salbench::gradcheck::{grad_check_at, scalar_tensor};
use salbench::losses::{laplacian, total_loss};
use salbench::tensor::xavier_bound;
use salbench::{Error, Rng, Tensor};

fn inputs(n: usize, size: usize, seed: u64) -> (Tensor, Tensor, Tensor) {
    let mut rng = Rng::new(seed);
    let rgb = Tensor::uniform([n, 3, size, size], 0.0, 1.0, &mut rng);
    let t = Tensor::uniform([n, 1, size, size], 0.0, 1.0, &mut rng);
    let gt = Tensor::from_fn([n, 1, size, size], |_, _, y, x| {
        let c = size / 2;
        if y.abs_diff(c) < size / 4 && x.abs_diff(c + 2) < size / 5 {
            1.0
        } else {
            0.0
        }
    });
    (rgb, t, gt)
}

#[test]
fn same_seed_same_bundle() {
    let cfg = NetConfig::default();
    let a = adfnet_init(&cfg, 11).unwrap();
    let b = adfnet_init(&cfg, 11).unwrap();
    let c = adfnet_init(&cfg, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn weights_respect_xavier_bound_and_biases_start_at_zero() {
    let net = adfnet_init(&NetConfig::default(), 5).unwrap();
    for (name, conv) in net.named_convs() {
        let [o, i, kh, kw] = conv.weight.dims();
        let bound = xavier_bound(o, i, kh, kw);
        assert!(conv.weight.max_abs() <= bound, "{name}");
        assert!(conv.weight.max_abs() > 0.0, "{name}");
        assert!(conv.bias.iter().all(|&b| b == 0.0), "{name}");
    }
}

#[test]
fn forward_is_bitwise_reproducible() {
    let net = adfnet_init(&NetConfig::default(), 7).unwrap();
    let (rgb, t, _) = inputs(1, 64, 8);
    let a = adfnet_forward(&net, &rgb, &t).unwrap();
    let b = adfnet_forward(&net, &rgb, &t).unwrap();
    assert_eq!(a.dims(), [1, 1, 64, 64]);
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn batch_packing_does_not_change_outputs() {
    let net = adfnet_init(&NetConfig::default(), 2).unwrap();
    let (rgb, t, _) = inputs(2, 32, 3);
    let both = net.forward(&rgb, &t).unwrap();
    for i in 0..2 {
        let single = net
            .forward(&rgb.batch_slice(i, 1).unwrap(), &t.batch_slice(i, 1).unwrap())
            .unwrap();
        let packed = both.batch_slice(i, 1).unwrap();
        for (a, b) in single.data().iter().zip(packed.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn identical_streams_are_symmetric() {
    let cfg = NetConfig {
        rgb_channels: 1,
        ..NetConfig::default()
    };
    let mut net = adfnet_init(&cfg, 4).unwrap();
    net.t_blocks = net.rgb_blocks.clone();
    net.cbam_t = net.cbam_rgb.clone();
    let mut rng = Rng::new(9);
    let a = Tensor::uniform([1, 1, 32, 32], 0.0, 1.0, &mut rng);
    let b = Tensor::uniform([1, 1, 32, 32], 0.0, 1.0, &mut rng);
    assert_eq!(net.forward(&a, &b).unwrap(), net.forward(&b, &a).unwrap());
}

#[test]
fn rejects_bad_geometry() {
    let net = adfnet_init(&NetConfig::default(), 1).unwrap();
    let rgb = Tensor::zeros([1, 3, 64, 32]);
    let t = Tensor::zeros([1, 1, 64, 32]);
    assert!(matches!(net.forward(&rgb, &t), Err(Error::Shape(_))));
    let rgb = Tensor::zeros([1, 1, 64, 64]);
    let t = Tensor::zeros([1, 1, 64, 64]);
    assert!(matches!(net.forward(&rgb, &t), Err(Error::Shape(_))));
}

/// The loss is only piecewise smooth (ReLU, max selection, the absolute value in the boundary
/// map). A coordinate is checked when the ±h perturbations stay on the same piece as the
/// unperturbed point; elsewhere central differences straddle a kink and say nothing.
fn pieces(net: &AdfNetToy, rgb: &Tensor, t: &Tensor) -> Vec<usize> {
    let (pred, cache) = net.forward_cached(rgb, t).unwrap();
    let mut out = cache.pieces();
    out.extend(laplacian(&pred).unwrap().data().iter().map(|&v| usize::from(v > 0.0)));
    out
}

/// Sampled `(tensor, element)` coordinates whose ±h perturbations stay on the same smooth piece.
fn smooth_coords(net: &AdfNetToy, rgb: &Tensor, t: &Tensor, h: f64, per_tensor: usize, seed: u64) -> (Vec<(usize, usize)>, usize) {
    let params = net.param_tensors();
    let base = pieces(net, rgb, t);
    let mut rng = Rng::new(seed);
    let mut coords = Vec::new();
    let mut candidates = 0;
    for (k, p) in params.iter().enumerate() {
        for _ in 0..per_tensor {
            let i = rng.below(p.len());
            candidates += 1;
            let stable = [h, -h].iter().all(|&d| {
                let mut ps = params.clone();
                ps[k].data_mut()[i] += d;
                pieces(&net.with_param_tensors(&ps).unwrap(), rgb, t) == base
            });
            if stable {
                coords.push((k, i));
            }
        }
    }
    (coords, candidates)
}

/// Where the ground-truth boundary is set but the prediction is still flat, the edge term
/// takes the log of a near-zero boundary response, whose higher derivatives are large enough
/// to dominate a 1e-5 central difference. The full loss is therefore checked at the smallest
/// admissible step.
#[test]
fn loss_gradient_of_every_parameter_matches_finite_differences() {
    let h = 1e-6;
    let net = adfnet_init(&NetConfig::default(), 21).unwrap();
    let (rgb, t, gt) = inputs(1, 32, 22);
    let params = net.param_tensors();
    let value = |ps: &[Tensor]| {
        let n = net.with_param_tensors(ps)?;
        let pred = n.forward(&rgb, &t)?;
        Ok(scalar_tensor(total_loss(&pred, &gt)?.total))
    };
    let gradient = |ps: &[Tensor]| {
        let n = net.with_param_tensors(ps)?;
        Ok(loss_and_grads(&n, &rgb, &t, &gt)?.1.param_tensors())
    };
    let (coords, candidates) = smooth_coords(&net, &rgb, &t, h, 3, 23);
    assert!(coords.len() * 10 >= candidates * 9, "only {} of {candidates} coordinates are smooth", coords.len());
    let checked: std::collections::BTreeSet<usize> = coords.iter().map(|c| c.0).collect();
    assert_eq!(checked.len(), params.len(), "every parameter tensor is checked");
    let err = grad_check_at(value, gradient, &params, h, &coords).unwrap();
    assert!(err < 1e-5, "max relative error {err:e}");
}

/// The network's own backward pass at the standard step, through a fixed linear probe of the
/// output.
#[test]
fn network_backward_matches_finite_differences() {
    let h = 1e-5;
    let net = adfnet_init(&NetConfig::default(), 31).unwrap();
    let (rgb, t, _) = inputs(1, 32, 32);
    let mut rng = Rng::new(33);
    let probe = Tensor::uniform([1, 1, 32, 32], -1.0, 1.0, &mut rng);
    let params = net.param_tensors();
    let value = |ps: &[Tensor]| {
        let n = net.with_param_tensors(ps)?;
        Ok(scalar_tensor(n.forward(&rgb, &t)?.dot(&probe)?))
    };
    let gradient = |ps: &[Tensor]| {
        let n = net.with_param_tensors(ps)?;
        let (_, cache) = n.forward_cached(&rgb, &t)?;
        Ok(n.backward(&cache, &probe)?.param_tensors())
    };
    let (coords, candidates) = smooth_coords(&net, &rgb, &t, h, 3, 34);
    assert!(coords.len() * 10 >= candidates * 8, "only {} of {candidates} coordinates are smooth", coords.len());
    let err = grad_check_at(value, gradient, &params, h, &coords).unwrap();
    assert!(err < 1e-5, "max relative error {err:e}");
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let net = adfnet_init(&NetConfig::default(), 3).unwrap();
    let (rgb, t, gt) = inputs(1, 32, 4);
    let (next, loss) = train_step(&net, &rgb, &t, &gt, 0.0).unwrap();
    assert_eq!(next, net);
    assert!(loss.total > 0.0 && loss.total.is_finite());
    assert!(matches!(train_step(&net, &rgb, &t, &gt, -1.0), Err(Error::Contract(_))));
    let soft = gt.map(|v| v * 0.5);
    assert!(matches!(train_step(&net, &rgb, &t, &soft, 0.1), Err(Error::Contract(_))));
}

#[test]
fn a_few_steps_reduce_the_loss_on_one_pair() {
    let mut net: AdfNetToy = adfnet_init(&NetConfig::default(), 13).unwrap();
    let (rgb, t, gt) = inputs(1, 32, 14);
    let (_, first) = train_step(&net, &rgb, &t, &gt, 0.0).unwrap();
    for _ in 0..20 {
        net = train_step(&net, &rgb, &t, &gt, 0.003).unwrap().0;
    }
    let (_, last) = train_step(&net, &rgb, &t, &gt, 0.0).unwrap();
    assert!(last.total < first.total, "{} -> {}", first.total, last.total);
}
