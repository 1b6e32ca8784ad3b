//! Reverse-mode gradients checked against central finite differences.

use paint_core::tensor::{AttentionShape, Mlp, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Var;

/// Builds `loss = Σ out ⊙ r` with a fixed random projection `r`, so every
/// output element carries a distinct upstream gradient.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let r = Tensor::randn(tape.shape(out), 1.0, &mut rng);
    let rv = tape.leaf(&r);
    let p = tape.mul(out, rv).unwrap();
    tape.sum(p).unwrap()
}

fn eval(inputs: &[Tensor<f64>], build: &Build, seed: u64) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &vars);
    let loss = project(&mut tape, out, seed);
    tape.value(loss)[0]
}

/// Normwise relative error `‖g_ad − g_fd‖ / ‖g_fd‖` per input tensor.
fn check(inputs: Vec<Tensor<f64>>, build: &Build, seed: u64) -> f64 {
    let inputs: Vec<Tensor<f64>> = inputs.into_iter().map(Tensor::with_grad).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &vars);
    let loss = project(&mut tape, out, seed);
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let ad = grads.tensor(*v);
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= FD_STEP;
            let fd = (eval(&plus, build, seed) - eval(&minus, build, seed)) / (2.0 * FD_STEP);
            num += (ad.data()[j] - fd).powi(2);
            den += fd * fd;
        }
        let rel = num.sqrt() / den.sqrt().max(1e-12);
        worst = worst.max(rel);
    }
    worst
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, rng)
}

fn sweep(name: &str, make: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>, build: &Build) {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rel = check(make(&mut rng), build, seed);
        assert!(rel < REL_TOL, "{name} seed {seed}: rel err {rel:e}");
    }
}

#[test]
fn matmul_gradients() {
    sweep(
        "matmul",
        |r| vec![randn(&[2, 3, 4], r), randn(&[4, 5], r)],
        &|t, v| t.matmul(v[0], v[1]).unwrap(),
    );
}

#[test]
fn broadcast_add_sub_mul_gradients() {
    sweep(
        "add",
        |r| vec![randn(&[3, 4, 5], r), randn(&[4, 5], r)],
        &|t, v| t.add(v[0], v[1]).unwrap(),
    );
    sweep(
        "sub",
        |r| vec![randn(&[3, 4, 5], r), randn(&[3, 1, 5], r)],
        &|t, v| t.sub(v[0], v[1]).unwrap(),
    );
    sweep(
        "mul",
        |r| vec![randn(&[3, 4], r), randn(&[4], r)],
        &|t, v| t.mul(v[0], v[1]).unwrap(),
    );
    sweep(
        "mul-same",
        |r| vec![randn(&[6], r), randn(&[6], r)],
        &|t, v| t.mul(v[0], v[1]).unwrap(),
    );
}

#[test]
fn layernorm_gradients() {
    sweep(
        "layernorm",
        |r| vec![randn(&[5, 8], r), randn(&[8], r), randn(&[8], r)],
        &|t, v| t.layernorm(v[0], v[1], v[2], 1e-5).unwrap(),
    );
}

#[test]
fn gelu_and_softmax_gradients() {
    sweep("gelu", |r| vec![randn(&[4, 6], r)], &|t, v| t.gelu(v[0]).unwrap());
    sweep("softmax", |r| vec![randn(&[4, 6], r)], &|t, v| t.softmax(v[0]).unwrap());
}

#[test]
fn attention_gradients() {
    let shape = AttentionShape { groups: 3, seq: 4, heads: 2 };
    sweep(
        "attention",
        |r| vec![randn(&[12, 6], r), randn(&[12, 6], r), randn(&[12, 6], r)],
        &move |t, v| t.attention(v[0], v[1], v[2], shape).unwrap(),
    );
}

#[test]
fn patch_embed_and_layout_gradients() {
    sweep(
        "linear_patch_embed",
        |r| vec![randn(&[2, 3, 4, 4], r), randn(&[12, 5], r), randn(&[5], r)],
        &|t, v| t.linear_patch_embed(v[0], v[1], v[2], 2).unwrap(),
    );
    sweep(
        "unpatchify",
        |r| vec![randn(&[8, 12], r)],
        &|t, v| t.unpatchify(v[0], 2, 3, 4, 4, 2).unwrap(),
    );
    sweep(
        "swap_axes01",
        |r| vec![randn(&[3, 4, 2], r)],
        &|t, v| t.swap_axes01(v[0]).unwrap(),
    );
    sweep(
        "reshape",
        |r| vec![randn(&[3, 4], r)],
        &|t, v| t.reshape(v[0], &[2, 6]).unwrap(),
    );
    sweep(
        "concat_channels",
        |r| vec![randn(&[2, 1, 3, 3], r), randn(&[2, 2, 3, 3], r)],
        &|t, v| t.concat_channels(&[v[0], v[1]]).unwrap(),
    );
}

#[test]
fn reductions_and_scale_gradients() {
    sweep("mean", |r| vec![randn(&[7], r)], &|t, v| {
        let s = t.scale(v[0], 3.0).unwrap();
        let sq = t.mul(s, v[0]).unwrap();
        t.mean(sq).unwrap()
    });
}

#[test]
fn three_layer_mlp_gradients() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, "mlp", &[4, 8, 8, 3], &mut rng);
        let x = randn(&[5, 4], &mut rng);
        let n_params = store.len();
        let mut inputs: Vec<Tensor<f64>> = store.tensors().to_vec();
        inputs.push(x);
        let rel = check(
            inputs,
            &move |t, v| mlp.forward(t, &v[..n_params], v[n_params]).unwrap(),
            seed,
        );
        assert!(rel < REL_TOL, "mlp seed {seed}: rel err {rel:e}");
    }
}

#[test]
fn trivial_analytic_gradients() {
    let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad();
    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let s = tape.sum(xv).unwrap();
    assert_eq!(tape.backward(s).unwrap().get(xv).unwrap(), &[1.0, 1.0]);

    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let sq = tape.mul(xv, xv).unwrap();
    let s = tape.sum(sq).unwrap();
    assert_eq!(tape.backward(s).unwrap().get(xv).unwrap(), &[2.0, 4.0]);
}

#[test]
fn forward_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = randn(&[3, 3], &mut rng);
    let eye = Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
    let mut tape = Tape::new();
    let (iv, av) = (tape.leaf(&eye), tape.leaf(&a));
    let p = tape.matmul(iv, av).unwrap();
    assert_eq!(tape.value(p), a.data());

    let z = tape.constant(&[3], vec![0.0; 3]).unwrap();
    let sm = tape.softmax(z).unwrap();
    for &p in tape.value(sm) {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }

    let cst = tape.constant(&[4], vec![2.5; 4]).unwrap();
    let g = tape.constant(&[4], vec![1.7; 4]).unwrap();
    let b = tape.constant(&[4], vec![0.0; 4]).unwrap();
    let ln = tape.layernorm(cst, g, b, 1e-5).unwrap();
    assert_eq!(tape.value(ln), &[0.0; 4]);
}

#[test]
fn errors_name_op_and_shapes() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
    let b = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
    let msg = tape.matmul(a, b).unwrap_err().to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    let big = tape.constant(&[1], vec![1e300]).unwrap();
    let sq = tape.mul(big, big).unwrap_err().to_string();
    assert!(sq.contains("non-finite"), "{sq}");
    let v = tape.constant(&[2], vec![1.0, 2.0]).unwrap();
    assert!(tape.backward(v).is_err());
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 6, 2], &mut rng);
        let x = randn(&[4, 3], &mut rng);
        let mut tape = Tape::new();
        let pv = store.bind(&mut tape);
        let xv = tape.leaf(&x);
        let y = mlp.forward(&mut tape, &pv, xv).unwrap();
        let l = tape.mean(y).unwrap();
        let out = tape.value(l)[0];
        let g = tape.backward(l).unwrap();
        (out, pv.iter().map(|v| g.tensor(*v)).collect::<Vec<_>>())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(ga, gb);
}

#[test]
fn generic_over_f32() {
    let x = Tensor::<f32>::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad();
    let mut tape = Tape::new();
    let xv = tape.leaf(&x);
    let sq = tape.mul(xv, xv).unwrap();
    let s = tape.sum(sq).unwrap();
    assert_eq!(tape.backward(s).unwrap().get(xv).unwrap(), &[2.0f32, 4.0]);
}
