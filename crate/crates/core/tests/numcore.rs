mod common;

use csrobust::numcore::{finite_diff, grad, l1norm, matvec, matvec_t, relu, stable_log1p_sum_exp, Rng, Tape, Tensor};
use csrobust::train::Objective;
use proptest::prelude::*;

fn v(x: &[f64]) -> Tensor<f64> {
    Tensor::vector(x.to_vec())
}

#[test]
fn matvec_hand_cases() {
    let id = Tensor::<f64>::eye(3);
    assert_eq!(matvec(&id, &v(&[1.0, 2.0, 3.0])).unwrap().data(), &[1.0, 2.0, 3.0]);

    let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
    assert_eq!(matvec(&w, &v(&[1.0, 1.0])).unwrap().data(), &[3.0, 7.0]);
    assert_eq!(matvec_t(&w, &v(&[1.0, 1.0])).unwrap().data(), &[4.0, 6.0]);

    let zero = Tensor::<f64>::zeros(&[2, 3]);
    assert_eq!(matvec(&zero, &v(&[5.0, -1.0, 2.0])).unwrap().data(), &[0.0, 0.0]);
    assert!(matvec(&w, &v(&[1.0])).is_err());
    assert!(matvec_t(&w, &v(&[1.0, 2.0, 3.0])).is_err());
}

#[test]
fn relu_cases_and_kink_convention() {
    assert_eq!(relu(&v(&[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
    assert_eq!(relu(&v(&[-3.0, -0.5])).data(), &[0.0, 0.0]);

    let tape = Tape::new();
    let x = tape.leaf(v(&[0.0, -1.0, 2.0]));
    let g = tape.backward(x.relu().sum()).unwrap();
    assert_eq!(g.get(x).data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn l1norm_cases() {
    assert_eq!(l1norm(&v(&[1.0, -2.0, 3.0])), 6.0);
    assert_eq!(l1norm(&v(&[0.0, 0.0])), 0.0);

    let tape = Tape::new();
    let x = tape.leaf(v(&[0.0, 0.0, 0.0]));
    let g = tape.backward(x.l1()).unwrap();
    assert_eq!(g.get(x).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn l1norm_gradient_is_sign_away_from_zero() {
    let mut rng = Rng::new(7);
    for _ in 0..20 {
        let p = vec![Tensor::vector((0..6).map(|_| rng.normal()).collect::<Vec<f64>>())];
        let (_, g) = grad(&p, |_, x| Ok(x[0].l1())).unwrap();
        let fd = finite_diff(&p, 1e-6, |q| Ok(l1norm(&q[0]))).unwrap();
        for ((a, n), x) in g[0].data().iter().zip(fd[0].data()).zip(p[0].data()) {
            assert_eq!(*a, x.signum());
            assert!((a - n).abs() < 1e-8);
        }
    }
}

#[test]
fn log1p_sum_exp_cases() {
    assert_eq!(stable_log1p_sum_exp::<f64>(&[]).unwrap(), 0.0);
    assert!((stable_log1p_sum_exp(&[(1.0f64, 0.0)]).unwrap() - 2f64.ln()).abs() < 1e-15);
    let big = stable_log1p_sum_exp(&[(1.0f64, 1000.0)]).unwrap();
    let exact = 1000.0 + (-1000.0f64).exp().ln_1p();
    assert!(((big - exact) / exact).abs() < 1e-12);
    assert!(stable_log1p_sum_exp(&[(1.0f64, -1e4), (2.0, 1e4)]).unwrap().is_finite());
    // zero weights contribute nothing, whatever their exponent
    assert_eq!(stable_log1p_sum_exp(&[(0.0f64, 1e4), (1.0, 0.0)]).unwrap(), 2f64.ln());
    assert!(stable_log1p_sum_exp(&[(-1.0f64, 0.0)]).is_err());
}

#[test]
fn grad_hand_cases() {
    let (val, g) = grad(&[v(&[3.0])], |_, x| Ok(x[0].mul(x[0]).sum())).unwrap();
    assert_eq!((val, g[0].data()[0]), (9.0, 6.0));
    let (_, g) = grad(&[v(&[-1.0])], |_, x| Ok(x[0].relu().sum())).unwrap();
    assert_eq!(g[0].data(), &[0.0]);
}

#[test]
fn finite_diff_cases() {
    let g = finite_diff(&[v(&[3.0])], 1e-5, |p| Ok(p[0].data()[0].powi(2))).unwrap();
    assert!((g[0].data()[0] - 6.0).abs() < 1e-8);
    assert!(finite_diff(&[v(&[3.0])], -1.0, |_| Ok(0.0)).is_err());
}

#[test]
fn ce_gradient_of_random_two_layer_nets_matches_finite_differences() {
    let mut rng = Rng::new(11);
    let obj = Objective::<f64>::ce();
    let mut checked = 0;
    for _ in 0..100 {
        let (d, h, m) = (2 + rng.below(4), 3 + rng.below(8), 2 + rng.below(3));
        let net = common::random_net(&mut rng, &[d, h, m]);
        let data = common::random_dataset(&mut rng, d, m, 4);
        let r = common::check_gradient(&obj, &net, &data, &[0, 1, 2, 3], 1e-5, 1e-6);
        assert!(r.max_rel_err < 1e-4, "relative error {}", r.max_rel_err);
        checked += r.checked;
    }
    assert!(checked > 1000);
}

#[test]
fn rng_streams_are_reproducible_and_split() {
    let draw = |r: &mut Rng| (0..32).map(|_| r.next_u64()).collect::<Vec<_>>();
    assert_eq!(draw(&mut Rng::new(5)), draw(&mut Rng::new(5)));
    assert_ne!(draw(&mut Rng::new(5)), draw(&mut Rng::new(6)));
    let root = Rng::new(5);
    assert_eq!(draw(&mut root.substream("a")), draw(&mut root.substream("a")));
    assert_ne!(draw(&mut root.substream("a")), draw(&mut root.substream("b")));
    assert_ne!(
        draw(&mut root.substream_indexed("a", 0)),
        draw(&mut root.substream_indexed("a", 1))
    );
}

fn vecs(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-1e3..1e3f64, n), prop::collection::vec(-1e3..1e3f64, n))
}

proptest! {
    #[test]
    fn l1_triangle_and_homogeneity((a, b) in vecs(8), k in -50.0..50.0f64) {
        let (ta, tb) = (v(&a), v(&b));
        let sum = ta.zip_map(&tb, |x, y| x + y).unwrap();
        let bound = l1norm(&ta) + l1norm(&tb);
        prop_assert!(l1norm(&sum) <= bound * (1.0 + 4.0 * f64::EPSILON));
        let scaled = l1norm(&ta.map(|x| k * x));
        let expect = k.abs() * l1norm(&ta);
        prop_assert!((scaled - expect).abs() <= 8.0 * f64::EPSILON * expect.max(1.0));
    }

    #[test]
    fn log1p_sum_exp_is_monotone(
        w in prop::collection::vec(0.0..5.0f64, 1..6),
        t in prop::collection::vec(-50.0..50.0f64, 6),
        pick in 0usize..6,
        bump in 0.0..3.0f64,
    ) {
        let terms: Vec<(f64, f64)> = w.iter().zip(&t).map(|(&a, &b)| (a, b)).collect();
        let base = stable_log1p_sum_exp(&terms).unwrap();
        let i = pick % terms.len();
        let mut up_t = terms.clone();
        up_t[i].1 += bump;
        let mut up_w = terms.clone();
        up_w[i].0 += bump;
        prop_assert!(stable_log1p_sum_exp(&up_t).unwrap() >= base);
        prop_assert!(stable_log1p_sum_exp(&up_w).unwrap() >= base);
    }
}
