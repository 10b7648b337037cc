use glyco_autograd::{Conv2dOpts, Graph, Tensor};
use proptest::prelude::*;

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_ignores_shift(xs in vec_strategy(9), shift in -50.0f64..50.0) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![3, 3], xs.clone()).unwrap());
        let s = g.softmax(x, 1).unwrap();
        let shifted = g.affine(x, 1.0, shift);
        let s2 = g.softmax(shifted, 1).unwrap();
        for row in g.value(s).data().chunks(3) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v > 0.0));
        }
        for (a, b) in g.value(s).data().iter().zip(g.value(s2).data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss(xs in vec_strategy(6), ws in vec_strategy(6)) {
        let build = |g: &mut Graph| {
            let x = g.param(Tensor::new(vec![2, 3], xs.clone()).unwrap());
            let w = g.constant(Tensor::new(vec![2, 3], ws.clone()).unwrap());
            let s = g.sigmoid(x);
            let p = g.mul(s, w).unwrap();
            let l1 = g.sum(p);
            let sq = g.mul(x, x).unwrap();
            let l2 = g.mean(sq);
            (x, l1, l2)
        };
        let mut g = Graph::new();
        let (x, l1, l2) = build(&mut g);
        let total = g.add(l1, l2).unwrap();
        g.backward(total).unwrap();
        let joint = g.grad(x).unwrap().clone();

        let mut g = Graph::new();
        let (x, l1, l2) = build(&mut g);
        g.backward(l1).unwrap();
        g.backward(l2).unwrap();
        for (a, b) in joint.data().iter().zip(g.grad(x).unwrap().data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pointwise_conv_is_channel_matmul(xs in vec_strategy(3 * 4 * 2), ks in vec_strategy(2 * 3)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![3, 4, 2], xs.clone()).unwrap());
        let k = g.constant(Tensor::new(vec![2, 3, 1, 1], ks.clone()).unwrap());
        let y = g.conv2d(x, k, None, Conv2dOpts::default()).unwrap();
        let xm = g.constant(Tensor::new(vec![3, 8], xs).unwrap());
        let km = g.constant(Tensor::new(vec![2, 3], ks).unwrap());
        let ym = g.matmul(km, xm).unwrap();
        for (a, b) in g.value(y).data().iter().zip(g.value(ym).data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
