//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Define-by-run: each operation records a node when any input requires
//! gradients, and [`Tensor::backward`] replays the graph in reverse. The op
//! set is exactly what the segmentation model and flow objectives need;
//! every rule is checked against [`finite_difference_gradient`].

mod backward;
mod fd;
mod ops;
mod tensor;

pub use fd::{all_close, close, finite_difference_gradient, finite_difference_jacobian, lu_det};
pub use ops::{apply, OpKind};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn leaf(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::leaf(shape, data).unwrap()
    }

    #[test]
    fn add_matches_arithmetic() {
        let x = Tensor::scalar(1.0);
        let y = Tensor::scalar(2.0);
        let z = apply(&OpKind::Add, &[&x, &y]).unwrap();
        assert_eq!(z.item(), 3.0);
    }

    #[test]
    fn tanh_at_zero() {
        let x = Tensor::scalar(0.0);
        assert_eq!(apply(&OpKind::Tanh, &[&x]).unwrap().item(), 0.0);
    }

    #[test]
    fn matmul_hand_expansion() {
        // [[1,2],[3,4]] x [1,1]^T = [3,7]
        let a = leaf(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = leaf(&[2, 1], vec![1.0, 1.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(*c.data(), vec![3.0, 7.0]);
        // vector rhs gives the same values with shape [2]
        let v = leaf(&[2], vec![1.0, 1.0]);
        let cv = a.matmul(&v).unwrap();
        assert_eq!(cv.shape(), &[2]);
        assert_eq!(*cv.data(), vec![3.0, 7.0]);
    }

    #[test]
    fn square_gradient() {
        let x = Tensor::scalar_leaf(3.0);
        let y = x.mul(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let x = Tensor::scalar_leaf(0.0);
        let y = x.tanh().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn gradient_accumulates_across_branches() {
        // y = x*x + 3x  ->  dy/dx = 2x + 3
        let x = Tensor::scalar_leaf(2.0);
        let a = x.mul(&x).unwrap();
        let b = x.mul_scalar(3.0).unwrap();
        let y = a.add(&b).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0]);
    }

    #[test]
    fn constant_function_has_zero_fd_gradient() {
        let x = Tensor::constant(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = finite_difference_gradient(|_| Ok(Tensor::scalar(4.2)), &x, 1e-5).unwrap();
        assert_eq!(g.to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn fd_gradient_of_square() {
        let x = Tensor::constant(&[1], vec![3.0]).unwrap();
        let g = finite_difference_gradient(|t| t.mul(t)?.sum(), &x, 1e-5).unwrap();
        assert!(close(g.item(), 6.0, 0.0, 1e-6));
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let a = Tensor::zeros(&[2]);
        let b = Tensor::zeros(&[3]);
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn domain_errors() {
        let x = Tensor::constant(&[1], vec![0.0]).unwrap();
        assert!(x.log().is_err());
        let y = Tensor::constant(&[1], vec![-1.0]).unwrap();
        assert!(y.sqrt().is_err());
        let num = Tensor::scalar(1.0);
        assert!(num.div(&x).is_err());
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let x = leaf(&[2], vec![1.0, 2.0]);
        let y = x.mul(&x).unwrap();
        assert!(y.backward().is_err());
    }

    #[test]
    fn determinism_bitwise() {
        let run = || {
            let x = leaf(&[4], vec![0.3, -1.7, 2.9, 0.01]);
            let y = x.tanh().unwrap().mul(&x).unwrap().sum().unwrap();
            y.backward().unwrap();
            (y.item(), x.grad().unwrap())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1.to_bits(), v2.to_bits());
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn concat_slice_broadcast_values() {
        let a = leaf(&[2], vec![1.0, 2.0]);
        let b = leaf(&[3], vec![3.0, 4.0, 5.0]);
        let c = Tensor::concat(&[&a, &b], 0).unwrap();
        assert_eq!(*c.data(), vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let s = c.slice(0, 1, 3).unwrap();
        assert_eq!(*s.data(), vec![2.0, 3.0, 4.0]);
        let one = Tensor::constant(&[1], vec![7.0]).unwrap();
        let wide = one.broadcast(&[4]).unwrap();
        assert_eq!(*wide.data(), vec![7.0; 4]);
    }

    // Every op kind, random shapes and values, backward vs central
    // differences. The acceptance suite runs the full 100-case version;
    // this keeps a fast smoke copy next to the code.
    #[test]
    fn gradcheck_all_ops_smoke() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..10 {
            check_random_ops(&mut rng, case);
        }
    }

    pub(crate) fn check_random_ops(rng: &mut ChaCha8Rng, _case: usize) {
        let dim = rng.gen_range(1..5usize);
        let n = rng.gen_range(1..4usize);
        let m = rng.gen_range(1..4usize);
        let randv =
            |rng: &mut ChaCha8Rng, k: usize| (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>();
        let randpos =
            |rng: &mut ChaCha8Rng, k: usize| (0..k).map(|_| rng.gen_range(0.1..3.0)).collect::<Vec<f64>>();

        type Build = Box<dyn Fn(&Tensor) -> crate::error::Result<Tensor>>;
        let other = Tensor::constant(&[dim], randv(rng, dim)).unwrap();
        let pos_other = Tensor::constant(&[dim], randpos(rng, dim)).unwrap();
        let mat = Tensor::constant(&[m, dim], randv(rng, m * dim)).unwrap();

        let cases: Vec<(&str, Vec<usize>, Vec<f64>, Build)> = vec![
            ("add", vec![dim], randv(rng, dim), {
                let o = other.clone();
                Box::new(move |x| x.add(&o)?.sum())
            }),
            ("sub", vec![dim], randv(rng, dim), {
                let o = other.clone();
                Box::new(move |x| x.sub(&o)?.sum())
            }),
            ("mul", vec![dim], randv(rng, dim), {
                let o = other.clone();
                Box::new(move |x| x.mul(&o)?.sum())
            }),
            ("div", vec![dim], randv(rng, dim), {
                let o = pos_other.clone();
                Box::new(move |x| x.div(&o)?.sum())
            }),
            ("matmul", vec![dim], randv(rng, dim), {
                let a = mat.clone();
                Box::new(move |x| a.matmul(x)?.sum())
            }),
            ("matmul_lhs", vec![m, dim], randv(rng, m * dim), {
                let b = Tensor::constant(&[dim, n], randv(rng, dim * n)).unwrap();
                Box::new(move |x| x.matmul(&b)?.sum())
            }),
            ("max", vec![dim], randv(rng, dim), {
                let o = other.clone();
                Box::new(move |x| x.maximum(&o)?.sum())
            }),
            ("tanh", vec![dim], randv(rng, dim), Box::new(|x| x.tanh()?.sum())),
            ("sigmoid", vec![dim], randv(rng, dim), Box::new(|x| x.sigmoid()?.sum())),
            ("softplus", vec![dim], randv(rng, dim), Box::new(|x| x.softplus()?.sum())),
            ("exp", vec![dim], randv(rng, dim), Box::new(|x| x.exp()?.sum())),
            ("log", vec![dim], randpos(rng, dim), Box::new(|x| x.log()?.sum())),
            ("abs", vec![dim], randv(rng, dim), Box::new(|x| x.abs()?.mul(x)?.sum())),
            ("sqrt", vec![dim], randpos(rng, dim), Box::new(|x| x.sqrt()?.sum())),
            ("sum", vec![dim], randv(rng, dim), {
                Box::new(move |x| {
                    let s = x.sum()?;
                    s.mul(&s)
                })
            }),
            ("mean", vec![dim], randv(rng, dim), {
                Box::new(move |x| {
                    let s = x.mean()?;
                    s.mul(&s)
                })
            }),
            ("concat", vec![dim], randv(rng, dim), {
                let o = other.clone();
                Box::new(move |x| {
                    let c = Tensor::concat(&[x, &o, x], 0)?;
                    c.mul(&c)?.sum()
                })
            }),
            ("slice", vec![dim + 2], randv(rng, dim + 2), {
                Box::new(move |x| {
                    let s = x.slice(0, 1, dim + 1)?;
                    s.mul(&s)?.sum()
                })
            }),
            ("broadcast", vec![1], randv(rng, 1), {
                let o = other.clone();
                Box::new(move |x| x.broadcast(&[dim])?.mul(&o)?.sum())
            }),
        ];

        for (name, shape, data, f) in cases {
            let x = Tensor::leaf(&shape, data.clone()).unwrap();
            let y = f(&x).unwrap();
            y.backward().unwrap();
            let analytic = x.grad().unwrap();
            let numeric = finite_difference_gradient(&f, &x, 1e-5).unwrap();
            assert!(
                all_close(&analytic, &numeric.to_vec(), 1e-4, 1e-7),
                "op {name}: analytic {analytic:?} vs numeric {:?}",
                numeric.to_vec()
            );
        }
    }
}
