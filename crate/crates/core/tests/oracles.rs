//! Straight-line re-implementations checked against the library.

use csilabs::multiuser::glauber_probability;
use csilabs::predictors::{
    arnet_forward, bilstm_forward, gradient_check, lstm_cell_forward, np_predict, np_seasonality,
    np_trend, rnn_forward, ArNetParams, Dataset, Gate, LinearHead, LstmParams, ModelSpec, NpParams,
    NpSpec, PredictorModel, RnnParams, Shape,
};
use csilabs::protocol::{fit_pf, predict_with_pf, PredictorFunction};
use csilabs::{
    cosine_similarity, generate_ar_trace, precoding_gain, quantize, ArTraceConfig, Bits,
    ChannelMatrix, ChannelVector, Complex64, QuantizerConfig,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn cvec(rng: &mut ChaCha8Rng, m: usize) -> ChannelVector {
    ChannelVector::new(
        (0..m)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect(),
    )
    .unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y[r] = sum_c m[r * cols + c] * x[c]`.
fn mv(m: &[f64], cols: usize, x: &[f64]) -> Vec<f64> {
    m.chunks(cols).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
    }
}

fn oracle_lstm_step(p: &LstmParams, x: &[f64], s: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = s.len();
    let gate = |g: Gate| -> Vec<f64> {
        let wx = mv(p.w(g), x.len(), x);
        let vs = mv(p.v(g), n, s);
        (0..n).map(|j| wx[j] + vs[j] + p.b(g)[j]).collect()
    };
    let f: Vec<f64> = gate(Gate::Forget).into_iter().map(sigmoid).collect();
    let i: Vec<f64> = gate(Gate::Input).into_iter().map(sigmoid).collect();
    let g: Vec<f64> = gate(Gate::Cell).into_iter().map(f64::tanh).collect();
    let o: Vec<f64> = gate(Gate::Output).into_iter().map(sigmoid).collect();
    let c_new: Vec<f64> = (0..n).map(|j| f[j] * c[j] + i[j] * g[j]).collect();
    let s_new: Vec<f64> = (0..n).map(|j| o[j] * c_new[j].tanh()).collect();
    (s_new, c_new)
}

fn random_lstm(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> LstmParams {
    let n = LstmParams::zeros(input, hidden).as_flat().len();
    LstmParams::from_flat(input, hidden, uniform(rng, n)).unwrap()
}

#[test]
fn lstm_cell_matches_hand_coded_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let p = random_lstm(&mut rng, 5, 3);
        let (x, s, c) = (uniform(&mut rng, 5), uniform(&mut rng, 3), uniform(&mut rng, 3));
        let (s1, c1) = lstm_cell_forward(&x, &s, &c, &p).unwrap();
        let (s2, c2) = oracle_lstm_step(&p, &x, &s, &c);
        close(&s1, &s2, 1e-12);
        close(&c1, &c2, 1e-12);
    }
}

#[test]
fn bilstm_matches_two_pass_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (input, hidden, outputs, steps) = (4, 3, 6, 5);
    let fwd = random_lstm(&mut rng, input, hidden);
    let bwd = random_lstm(&mut rng, input, hidden);
    let mut head = LinearHead::zeros(hidden, outputs);
    head.w_mut().copy_from_slice(&uniform(&mut rng, hidden * outputs));
    head.b_mut().copy_from_slice(&uniform(&mut rng, outputs));
    let seq: Vec<Vec<f64>> = (0..steps).map(|_| uniform(&mut rng, input)).collect();

    let run = |p: &LstmParams, order: &mut dyn Iterator<Item = &Vec<f64>>| {
        let (mut s, mut c) = (vec![0.0; hidden], vec![0.0; hidden]);
        for x in order {
            (s, c) = oracle_lstm_step(p, x, &s, &c);
        }
        s
    };
    let sf = run(&fwd, &mut seq.iter());
    let sb = run(&bwd, &mut seq.iter().rev());
    let comb: Vec<f64> = sf.iter().zip(&sb).map(|(a, b)| a * b).collect();
    let expect: Vec<f64> = mv(head.w(), hidden, &comb)
        .iter()
        .zip(head.b())
        .map(|(y, b)| y + b)
        .collect();
    close(&bilstm_forward(&seq, &fwd, &bwd, &head).unwrap(), &expect, 1e-12);
}

#[test]
fn rnn_matches_elman_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (input, hidden, outputs) = (4, 5, 3);
    let n = RnnParams::zeros(input, hidden, outputs).as_flat().len();
    let p = RnnParams::from_flat(input, hidden, outputs, uniform(&mut rng, n)).unwrap();
    let seq: Vec<Vec<f64>> = (0..6).map(|_| uniform(&mut rng, input)).collect();
    let mut s = vec![0.0; hidden];
    for x in &seq {
        let wx = mv(p.w(), input, x);
        let vs = mv(p.v(), hidden, &s);
        s = (0..hidden).map(|j| (wx[j] + vs[j] + p.b()[j]).tanh()).collect();
    }
    let expect: Vec<f64> = mv(p.head_w(), hidden, &s)
        .iter()
        .zip(p.head_b())
        .map(|(y, c)| y + c)
        .collect();
    close(&rnn_forward(&seq, &p).unwrap(), &expect, 1e-12);
}

fn random_arnet(rng: &mut ChaCha8Rng, inputs: usize, hidden: usize, layers: usize, outputs: usize) -> ArNetParams {
    let mut p = ArNetParams::zeros(inputs, hidden, layers, outputs);
    for i in 0..layers {
        let n = p.weight(i).len();
        p.weight_mut(i).copy_from_slice(&uniform(rng, n));
        let n = p.bias(i).len();
        p.bias_mut(i).copy_from_slice(&uniform(rng, n));
    }
    let n = p.output().len();
    p.output_mut().copy_from_slice(&uniform(rng, n));
    p
}

fn oracle_arnet(p: &ArNetParams, z: &[f64]) -> Vec<f64> {
    let mut a = z.to_vec();
    for i in 0..p.layers() {
        a = mv(p.weight(i), a.len(), &a)
            .iter()
            .zip(p.bias(i))
            .map(|(v, b)| (v + b).max(0.0))
            .collect();
    }
    mv(p.output(), a.len(), &a)
}

#[test]
fn arnet_matches_relu_mlp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for layers in 0..4 {
        let p = random_arnet(&mut rng, 6, 5, layers, 3);
        let z = uniform(&mut rng, 6);
        close(&arnet_forward(&z, &p).unwrap(), &oracle_arnet(&p, &z), 1e-12);
    }
}

#[test]
fn np_forecast_is_sum_of_components() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = NpSpec {
        changepoints: 4,
        seasonality: true,
        periods: vec![7.0, 30.5],
        fourier_order: 3,
        ar_layers: 2,
        ar_hidden: 6,
        time_scale: 50.0,
        ..Default::default()
    };
    let (lags, horizon) = (5, 3);
    let mut p = NpParams::zeros(&spec, lags, horizon, true);
    p.trend.growth = 0.3;
    p.trend.offset = -0.2;
    p.trend.growth_adjust = uniform(&mut rng, 4);
    p.trend.offset_adjust = uniform(&mut rng, 4);
    for c in p.seasonality.coefficients.iter_mut() {
        *c = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    p.arnet = random_arnet(&mut rng, lags, 6, 2, horizon);
    p.regressor_weights = Some(uniform(&mut rng, horizon));

    let history = uniform(&mut rng, lags);
    let reg = uniform(&mut rng, horizon);
    let t = 37.0;
    let y = np_predict(&history, t, &p, Some(&reg)).unwrap();
    let z: Vec<f64> = history.iter().rev().copied().collect();
    let ar = oracle_arnet(&p.arnet, &z);
    let w = p.regressor_weights.as_ref().unwrap();
    for k in 0..horizon {
        let tk = t + k as f64;
        let parts = np_trend(tk / p.time_scale, &p.trend)
            + np_seasonality(tk, &p.seasonality)
            + ar[k]
            + w[k] * reg[k];
        assert!((y[k] - parts).abs() < 1e-12);
    }
}

#[test]
fn pf_prediction_matches_matvec_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for m in [1, 4, 16] {
        let f = DMatrix::from_fn(m, m, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let pf = PredictorFunction::from_matrix(f.clone()).unwrap();
        let x = cvec(&mut rng, m);
        let y = predict_with_pf(&pf, &x).unwrap();
        for r in 0..m {
            let mut acc = Complex64::new(0.0, 0.0);
            for c in 0..m {
                acc += f[(r, c)] * x[c];
            }
            assert!((y[r] - acc).norm() <= 1e-12 * (1.0 + acc.norm()));
        }
    }
}

#[test]
fn pf_recovers_identity_on_full_rank_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m = 8;
    let data: Vec<ChannelVector> = (0..3 * m).map(|_| cvec(&mut rng, m)).collect();
    let pf = fit_pf(&data, &data).unwrap();
    assert!(pf.fit_residual() < 1e-10);
    let eye = DMatrix::<Complex64>::identity(m, m);
    assert!((pf.matrix() - eye).norm() < 1e-10);
}

#[test]
fn quantizer_matches_nearest_codeword_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for bits in 1u8..=6 {
        let r = rng.random_range(0.2..3.0);
        let cfg = QuantizerConfig::new(Bits::Finite(bits), r).unwrap();
        let levels = 1u32 << bits;
        let step = 2.0 * r / levels as f64;
        let book: Vec<f64> = (0..levels).map(|j| -r + (j as f64 + 0.5) * step).collect();
        let nearest = |x: f64| -> f64 {
            *book
                .iter()
                .min_by(|a, b| (*a - x).abs().total_cmp(&(*b - x).abs()))
                .unwrap()
        };
        let v = ChannelVector::new(
            (0..32)
                .map(|_| Complex64::new(rng.random_range(-1.5 * r..1.5 * r), rng.random_range(-1.5 * r..1.5 * r)))
                .collect(),
        )
        .unwrap();
        let q = quantize(&v, &cfg).reconstruct();
        for (a, z) in q.iter().zip(v.iter()) {
            assert!((a.re - nearest(z.re)).abs() < 1e-12);
            assert!((a.im - nearest(z.im)).abs() < 1e-12);
        }
    }
}

#[test]
fn precoding_gain_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let (m, k) = (6, 2);
        let a = DMatrix::from_fn(m, k, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let h = DMatrix::from_fn(m, k, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let fro = |x: &DMatrix<Complex64>| x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let (na, nh) = (fro(&a), fro(&h));
        let mut psi = 0.0;
        for i in 0..k {
            for j in 0..k {
                let mut e = Complex64::new(0.0, 0.0);
                for r in 0..m {
                    e += a[(r, i)].conj() * h[(r, j)];
                }
                psi += (e / (na * nh)).norm_sqr();
            }
        }
        let got = precoding_gain(&ChannelMatrix::new(a).unwrap(), &ChannelMatrix::new(h).unwrap()).unwrap();
        assert!((got - psi).abs() < 1e-12);
    }
}

#[test]
fn single_ue_gain_is_squared_cosine() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let a = ChannelMatrix::from_vector(&cvec(&mut rng, 8));
        let h = ChannelMatrix::from_vector(&cvec(&mut rng, 8));
        let c = cosine_similarity(&a, &h).unwrap();
        assert!((precoding_gain(&a, &h).unwrap() - c * c).abs() < 1e-12);
    }
}

#[test]
fn glauber_matches_logistic() {
    let e = std::f64::consts::E;
    assert!((glauber_probability(1.0) - e / (1.0 + e)).abs() < 1e-15);
    assert_eq!(glauber_probability(0.0), 0.5);
    assert!(glauber_probability(800.0) <= 1.0);
}

fn ar_dataset(seed: u64) -> Dataset {
    let (t, _) = generate_ar_trace(&ArTraceConfig::ar1(2, 64, 0.9, seed)).unwrap().normalized();
    Dataset::from_trace(&t, 6, 2, 0.0).unwrap()
}

#[test]
fn linear_ar_gradient_is_exact_to_roundoff() {
    let data = ar_dataset(0);
    let m = PredictorModel::new(ModelSpec::LinearAr, Shape::for_antennas(2, 6, 2), 0).unwrap();
    for i in [0, 10, 30] {
        assert!(gradient_check(&m, &data.get(i), 1e-5).unwrap() < 1e-7);
    }
}

#[test]
fn small_lstm_passes_gradient_check() {
    let data = ar_dataset(1);
    let m = PredictorModel::new(ModelSpec::Lstm { hidden: 4 }, Shape::for_antennas(2, 6, 2), 0).unwrap();
    assert!(gradient_check(&m, &data.get(5), 1e-5).unwrap() < 1e-4);
}

/// With a step large enough that roundoff no longer dominates the central
/// difference, every recurrent model agrees to 1e-4 on a panel of fixtures.
#[test]
fn recurrent_gradients_agree_across_fixtures() {
    for spec in [
        ModelSpec::Rnn { hidden: 8 },
        ModelSpec::Lstm { hidden: 8 },
        ModelSpec::Bilstm { hidden: 8 },
    ] {
        for seed in 0..10 {
            let data = ar_dataset(seed);
            let m = PredictorModel::new(spec.clone(), Shape::for_antennas(2, 6, 2), seed).unwrap();
            for i in [0, 20, 40] {
                let e = gradient_check(&m, &data.get(i), 1e-4).unwrap();
                assert!(e < 1e-4, "{spec:?} seed {seed} sample {i}: {e:e}");
            }
        }
    }
}
