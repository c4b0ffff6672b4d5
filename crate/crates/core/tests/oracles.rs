use avuc_core::bayes::{BnnModel, Posterior, VariationalLinear};
use avuc_core::diffcore::{softplus, Graph, Tensor, Var};
use avuc_core::shiftlab::{make_blobs, Split};
use avuc_core::trainer::{fit, Method, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// Central differences of `build` against its reverse-mode gradient.
fn check_grad(inputs: &[Tensor], build: &dyn Fn(&mut Graph, &[Var]) -> Var, tol: f64) {
    let eval = |vals: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let root = build(&mut g, &vars);
        g.value(root).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &vars);
    g.backward(root).unwrap();
    let h = 1e-5;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad_or_zeros(*v);
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            assert!(err < tol, "input {k}[{i}]: analytic {a} numeric {numeric}");
        }
    }
}

#[test]
fn elementwise_and_reduction_ops_match_finite_differences() {
    let mut r = rng(11);
    for _ in 0..10 {
        let a = random_tensor(&mut r, &[3, 4], -2.0, 2.0);
        let b = random_tensor(&mut r, &[3, 4], 0.5, 2.0);
        let row = random_tensor(&mut r, &[4], -1.0, 1.0);
        check_grad(
            &[a.clone(), b.clone(), row.clone()],
            &|g, v| {
                let m = g.mul(v[0], v[1]).unwrap();
                let d = g.div(v[0], v[1]).unwrap();
                let s = g.sub(m, d).unwrap();
                let t = g.tanh(s).unwrap();
                let sp = g.softplus(v[0]).unwrap();
                let e = g.exp(t).unwrap();
                let lg = g.log(v[1]).unwrap();
                let sq = g.square(lg).unwrap();
                let ar = g.add_row(sp, v[2]).unwrap();
                let all = g.add_all(&[e, sq, ar]).unwrap();
                let sc = g.scale(all, 0.3).unwrap();
                let rs = g.rsub_scalar(2.0, sc).unwrap();
                let mx = g.max_rows(rs).unwrap();
                let sr = g.sum_rows(v[0]).unwrap();
                let tot = g.add(mx, sr).unwrap();
                g.mean(tot).unwrap()
            },
            1e-7,
        );
    }
}

#[test]
fn matrix_and_softmax_ops_match_finite_differences() {
    let mut r = rng(12);
    for _ in 0..10 {
        let x = random_tensor(&mut r, &[5, 3], -1.0, 1.0);
        let w = random_tensor(&mut r, &[4, 3], -1.0, 1.0);
        let bias = random_tensor(&mut r, &[4], -0.5, 0.5);
        let k = random_tensor(&mut r, &[], 0.5, 2.0);
        check_grad(
            &[x, w, bias, k],
            &|g, v| {
                let wt = g.transpose(v[1]).unwrap();
                let h = g.matmul(v[0], wt).unwrap();
                let h = g.add_row(h, v[2]).unwrap();
                let h = g.mul_scalar_var(h, v[3]).unwrap();
                let p = g.softmax(h).unwrap();
                let lp = g.log_softmax(h).unwrap();
                let picked = g.gather(lp, &[0, 1, 2, 3, 1]).unwrap();
                let nll = g.mean(picked).unwrap();
                let nll = g.neg(nll).unwrap();
                let lpe = g.log_eps(p, 1e-12).unwrap();
                let ent = g.mul(p, lpe).unwrap();
                let ent = g.sum(ent).unwrap();
                g.sub(nll, ent).unwrap()
            },
            1e-7,
        );
    }
}

#[test]
fn relu_gradient_away_from_kink() {
    let x = Tensor::vector(vec![-1.5, -0.2, 0.3, 2.0]);
    check_grad(
        &[x],
        &|g, v| {
            let r = g.relu(v[0]).unwrap();
            let r = g.add_scalar(r, 1.0).unwrap();
            let r = g.square(r).unwrap();
            g.sum(r).unwrap()
        },
        1e-8,
    );
}

fn gaussian_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}

/// Composite Simpson integral of `q ln(q / p)` over `mu ± 12 sigma`.
fn kl_quadrature(mu: f64, sigma: f64, m: f64, s: f64) -> f64 {
    let (a, b) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
    let n = 20_000;
    let h = (b - a) / n as f64;
    let f = |x: f64| {
        let q = gaussian_pdf(x, mu, sigma);
        if q == 0.0 {
            return 0.0;
        }
        // log-ratio in closed form avoids underflow of p in the tails
        let log_ratio = (s / sigma).ln() - (x - mu).powi(2) / (2.0 * sigma * sigma) + (x - m).powi(2) / (2.0 * s * s);
        q * log_ratio
    };
    let mut acc = f(a) + f(b);
    for i in 1..n {
        acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

#[test]
fn kl_matches_numeric_integration() {
    let mut r = rng(3);
    for _ in 0..20 {
        let mu = r.random_range(-2.0..2.0);
        let rho = r.random_range(-3.0..1.5);
        let m = r.random_range(-1.0..1.0);
        let s = r.random_range(0.5..2.0);
        let mut layer = VariationalLinear::new(1, 1, &mut r);
        layer.weight_mu = Tensor::matrix(1, 1, vec![mu]).unwrap();
        layer.weight_rho = Tensor::matrix(1, 1, vec![rho]).unwrap();
        layer.prior_weight_mean = Tensor::matrix(1, 1, vec![m]).unwrap();
        layer.bias_mu = Tensor::vector(vec![m]);
        layer.bias_rho = Tensor::vector(vec![avuc_core::diffcore::inverse_softplus(s)]);
        layer.prior_bias_mean = Tensor::vector(vec![m]);
        layer.prior_std = s;
        // the bias term is q = p, so its KL vanishes
        let closed = layer.kl_value();
        let numeric = kl_quadrature(mu, softplus(rho), m, s);
        assert!((closed - numeric).abs() < 1e-6, "closed {closed} numeric {numeric}");
    }
}

#[test]
fn sampled_weight_spread_matches_softplus_rho() {
    // one input, two outputs: row [1] gives w + b, row [0] gives b
    let mut r = rng(4);
    let mut layer = VariationalLinear::new(1, 2, &mut r);
    let rhos = [-1.0, 0.5];
    layer.weight_mu = Tensor::matrix(2, 1, vec![0.3, -0.7]).unwrap();
    layer.weight_rho = Tensor::matrix(2, 1, rhos.to_vec()).unwrap();
    let model = BnnModel::from_layers(vec![layer], 2, Posterior::MeanField).unwrap();
    let x = Tensor::from_rows(&[[1.0], [0.0]]).unwrap();
    let n = 5000;
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    for t in 0..n {
        let l = model.logits(&x, avuc_core::seed::derive(99, t)).unwrap();
        for k in 0..2 {
            let w = l.get2(0, k) - l.get2(1, k);
            sum[k] += w;
            sq[k] += w * w;
        }
    }
    for k in 0..2 {
        let mean = sum[k] / n as f64;
        let std = (sq[k] / n as f64 - mean * mean).sqrt();
        let want = softplus(rhos[k]);
        assert!((std / want - 1.0).abs() < 0.03, "weight {k}: std {std}, softplus(rho) {want}");
    }
}

#[test]
fn tight_empirical_bayes_posterior_keeps_point_predictions() {
    let data = make_blobs(600, 3, 4, 1.0, 5).unwrap();
    let mut cfg = TrainConfig::new(Method::Vanilla, 30, 32, 0.01);
    cfg.seed = 5;
    let point = fit(&data, &cfg).unwrap().model;
    let test = data.subset(Split::Test);
    let reference = point.logits(&test.features, 0).unwrap();
    let mut bayes = BnnModel::new(4, &cfg.hidden, 3, Posterior::MeanField, 5).unwrap();
    bayes.empirical_bayes_init(&point.mean_weights(), 0.05).unwrap();
    for t in 0..20 {
        let l = bayes.logits(&test.features, avuc_core::seed::derive(7, t)).unwrap();
        let same = (0..l.rows())
            .filter(|&i| avuc_core::diffcore::argmax(l.row(i)) == avuc_core::diffcore::argmax(reference.row(i)))
            .count();
        assert!(same as f64 >= 0.95 * l.rows() as f64, "sample {t}: {same}/{}", l.rows());
    }
}
