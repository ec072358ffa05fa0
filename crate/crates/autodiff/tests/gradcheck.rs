use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqcpc_gan_autodiff::testing::{finite_difference, max_relative_error};
use vqcpc_gan_autodiff::{conv2d, cross_entropy, grad, Tensor};

fn randn(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Checks autodiff gradients of `f` against central differences at `x`.
fn check(shape: &[usize], x: Vec<f64>, f: impl Fn(&Tensor) -> Tensor) {
    let t = Tensor::param(x.clone(), shape);
    let y = f(&t);
    let g = grad(&[y], &[t], false).remove(0);
    let fd = finite_difference(|v| f(&Tensor::from_vec(v.to_vec(), shape)).item(), &x, 1e-6);
    let err = max_relative_error(g.data(), &fd, 1e-6);
    assert!(err < 1e-5, "relative error {err}: autodiff {:?} vs fd {:?}", g.data(), fd);
}

#[test]
fn elementwise_and_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = Tensor::from_vec(randn(&mut rng, 3), &[1, 3]);
    let x0: Vec<f64> = randn(&mut rng, 6).iter().map(|v| v + 2.5).collect();
    check(&[2, 3], x0, |x| {
        let y = &(x * &b) + &x.sqrt();
        let z = &y / &x.add_scalar(0.5);
        (&z.exp() - &x.ln()).tanh().sigmoid().sum_all()
    });
}

#[test]
fn reductions_and_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    check(&[2, 3, 4], randn(&mut rng, 24), |x| {
        let p = x.permute(&[2, 0, 1]).reshape(&[4, 6]);
        let s = p.sum_axes(&[0], true).square();
        let n = x.narrow(2, 1, 2).pad_axis(1, 1, 0).mean_axes(&[1], false);
        let c = Tensor::concat(&[x.narrow(0, 0, 1), x.narrow(0, 1, 1).scale(3.0)], 0);
        &(&s.sum_all() + &n.square().sum_all()) + &c.leaky_relu(0.2).sum_all()
    });
}

#[test]
fn matmul_transposes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let other = Tensor::from_vec(randn(&mut rng, 12), &[4, 3]);
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let shape_a = if ta { [4, 2] } else { [2, 4] };
        let b = if tb { other.transpose() } else { other.clone() };
        let b = b.detach();
        check(&shape_a, randn(&mut rng, 8), |a| a.matmul_t(&b, ta, tb).square().sum_all());
        let a_fixed = Tensor::from_vec(randn(&mut rng, 8), &shape_a);
        let shape_b = b.shape().to_vec();
        check(&shape_b, b.to_vec(), |bb| a_fixed.matmul_t(bb, ta, tb).square().sum_all());
    }
}

#[test]
fn conv_and_pooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = Tensor::from_vec(randn(&mut rng, 3 * 2 * 3 * 3), &[3, 2, 3, 3]);
    let bias = Tensor::from_vec(randn(&mut rng, 3), &[3]);
    check(&[2, 2, 6, 5], randn(&mut rng, 120), |x| {
        let y = conv2d(x, &w, Some(&bias), (2, 1), (1, 1));
        y.leaky_relu(0.2).upsample_nearest(2, 2).avg_pool_axis(3, 5).square().sum_all()
    });
    let x = Tensor::from_vec(randn(&mut rng, 120), &[2, 2, 6, 5]);
    check(&[3, 2, 3, 3], w.to_vec(), |w| conv2d(&x, w, None, (1, 2), (0, 1)).square().mean_all());
}

#[test]
fn softmax_cross_entropy_and_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    check(&[4, 5], randn(&mut rng, 20), |x| {
        let rows = x.index_select_rows(&[3, 0, 3, 1]);
        let back = rows.scatter_add_rows(&[1, 1, 0, 2], 3);
        &cross_entropy(&rows.scale(3.0), &[0, 4, 2, 2]) + &back.softmax(1).square().sum_all()
    });
}

#[test]
fn second_order_through_conv_matches_differenced_first_order() {
    // h(w) = || d/dx sum(leaky(conv(x, w)) * v) ||^2, differentiated w.r.t. w
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = Tensor::from_vec(randn(&mut rng, 2 * 4 * 4), &[1, 2, 4, 4]);
    let v = Tensor::from_vec(randn(&mut rng, 3 * 16), &[1, 3, 4, 4]);
    let w0 = randn(&mut rng, 3 * 2 * 3 * 3);
    let h = |w: &Tensor, create_graph: bool| {
        let xl = x.detach_requiring_grad();
        let y = (&conv2d(&xl, w, None, (1, 1), (1, 1)).leaky_relu(0.2).tanh() * &v).sum_all();
        let gx = grad(&[y], &[xl], create_graph).remove(0);
        gx.square().sum_all()
    };
    let w = Tensor::param(w0.clone(), &[3, 2, 3, 3]);
    let hv = h(&w, true);
    let gw = grad(&[hv], &[w], false).remove(0);
    let fd = finite_difference(|p| h(&Tensor::from_vec(p.to_vec(), &[3, 2, 3, 3]), false).item(), &w0, 1e-6);
    let err = max_relative_error(gw.data(), &fd, 1e-6);
    assert!(err < 1e-5, "second-order relative error {err}");
}

#[test]
fn unreachable_inputs_get_zero_gradient() {
    let a = Tensor::param(vec![1.0, 2.0], &[2]);
    let b = Tensor::param(vec![3.0], &[1]);
    let y = a.square().sum_all();
    let g = grad(&[y], &[a, b], false);
    assert_eq!(g[0].to_vec(), vec![2.0, 4.0]);
    assert_eq!(g[1].to_vec(), vec![0.0]);
}

#[test]
fn deep_chain_drops_without_overflow() {
    let x = Tensor::param(vec![0.5], &[1]);
    let mut y = x.clone();
    for _ in 0..200_000 {
        y = y.scale(1.0);
    }
    let g = grad(&[y.sum_all()], &[x], false);
    assert_eq!(g[0].to_vec(), vec![1.0]);
}
