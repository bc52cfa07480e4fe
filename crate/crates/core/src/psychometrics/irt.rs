//! Two-parameter logistic IRT by marginal maximum likelihood (EM over a
//! fixed standard-normal ability distribution) and Fisher item information.
//!
//! Items are parameterized internally as `P = logistic(a * theta + c)` and
//! reported as difficulty `b = -c / a`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::item_bank::{self, ResponseRecord};
use crate::simulator::reference::logistic;

/// Nodes and weights for expectations under N(0, 1): `E[f] ≈ Σ w_q f(x_q)`.
/// Exact for polynomials of degree below `2n`.
pub fn gauss_hermite_normal(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    let mut z: f64 = 0.0;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (PIM4, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    // physicists' nodes for exp(-t^2) -> standard normal
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let mut pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(&w)
        .map(|(t, wt)| (t * std::f64::consts::SQRT_2, wt / sqrt_pi))
        .collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    pairs.into_iter().unzip()
}

/// Fisher information `a^2 P (1 - P)` of a 2PL item at `theta`.
pub fn item_information(a: f64, b: f64, theta: f64) -> f64 {
    let p = logistic(a * (theta - b));
    let q = logistic(-a * (theta - b));
    a * a * p * q
}

/// Participants x items, `None` where an item was not reached.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    item_ids: Vec<String>,
    participant_ids: Vec<String>,
    cells: Vec<Option<bool>>,
}

impl ResponseMatrix {
    /// `cells` is row-major, one row per participant.
    pub fn new(item_ids: Vec<String>, participant_ids: Vec<String>, cells: Vec<Option<bool>>) -> Result<Self> {
        if cells.len() != item_ids.len() * participant_ids.len() {
            return Err(Error::invalid("response matrix size does not match its labels"));
        }
        Ok(ResponseMatrix {
            item_ids,
            participant_ids,
            cells,
        })
    }

    /// Correctness of `records` arranged by participant id and the given
    /// item order; records for other items are ignored.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ResponseRecord>, item_ids: &[String]) -> Self {
        let col: BTreeMap<&str, usize> = item_ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
        let mut rows: BTreeMap<String, Vec<Option<bool>>> = BTreeMap::new();
        for r in records {
            if let Some(&j) = col.get(r.item_id.as_str()) {
                rows.entry(r.participant_id.clone()).or_insert_with(|| vec![None; item_ids.len()])[j] = Some(r.correct);
            }
        }
        let participant_ids = rows.keys().cloned().collect();
        ResponseMatrix {
            item_ids: item_ids.to_vec(),
            participant_ids,
            cells: rows.into_values().flatten().collect(),
        }
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }
    pub fn participant_ids(&self) -> &[String] {
        &self.participant_ids
    }
    pub fn get(&self, participant: usize, item: usize) -> Option<bool> {
        self.cells[participant * self.item_ids.len() + item]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrtOptions {
    pub quadrature_nodes: usize,
    pub max_cycles: usize,
    /// Stop once no `a` or `b` moves more than this in one cycle.
    pub tolerance: f64,
    /// Holds every discrimination at this value when set.
    pub fixed_discrimination: Option<f64>,
}

impl Default for IrtOptions {
    fn default() -> Self {
        IrtOptions {
            quadrature_nodes: 21,
            max_cycles: 200,
            tolerance: 1e-4,
            fixed_discrimination: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtItem {
    pub item_id: String,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtModel {
    pub items: Vec<IrtItem>,
    /// Expected-a-posteriori ability per participant.
    pub abilities: Vec<(String, f64)>,
    /// Marginal log-likelihood before each EM cycle and after the last.
    pub log_likelihood: Vec<f64>,
    pub cycles: usize,
    pub converged: bool,
}

impl IrtModel {
    /// Per-item and total information at each `theta`.
    pub fn information_curve(&self, thetas: &[f64]) -> Vec<(f64, Vec<f64>, f64)> {
        thetas
            .iter()
            .map(|&t| {
                let per: Vec<f64> = self.items.iter().map(|it| item_information(it.a, it.b, t)).collect();
                let total = per.iter().sum();
                (t, per, total)
            })
            .collect()
    }
}

/// `-3.0, -2.9, ..., 3.0`
pub fn theta_grid() -> Vec<f64> {
    (-30..=30).map(|k| k as f64 / 10.0).collect()
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Expected complete-data log-likelihood of one item and its gradient /
/// negative Hessian in `(a, c)`.
struct ItemObjective<'a> {
    nodes: &'a [f64],
    n: &'a [f64],
    r: &'a [f64],
}

impl ItemObjective<'_> {
    fn value(&self, a: f64, c: f64) -> f64 {
        self.nodes
            .iter()
            .zip(self.n.iter().zip(self.r))
            .map(|(x, (n, r))| {
                let z = a * x + c;
                -r * softplus(-z) - (n - r) * softplus(z)
            })
            .sum()
    }

    fn derivatives(&self, a: f64, c: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let (mut g, mut h) = ([0.0; 2], [[0.0; 2]; 2]);
        for (x, (n, r)) in self.nodes.iter().zip(self.n.iter().zip(self.r)) {
            let p = logistic(a * x + c);
            let resid = r - n * p;
            let wgt = n * p * (1.0 - p);
            g[0] += resid * x;
            g[1] += resid;
            h[0][0] += wgt * x * x;
            h[0][1] += wgt * x;
            h[1][1] += wgt;
        }
        h[1][0] = h[0][1];
        (g, h)
    }

    /// Damped Newton ascent. The objective is concave in `(a, c)`, so steps
    /// below `1e-6` skip the value comparison, which rounding can defeat.
    fn maximize(&self, mut a: f64, mut c: f64, fixed_a: bool) -> (f64, f64) {
        let mut f = self.value(a, c);
        for _ in 0..50 {
            let (g, h) = self.derivatives(a, c);
            let (da, dc) = if fixed_a {
                if !(h[1][1] > 0.0) {
                    break;
                }
                (0.0, g[1] / h[1][1])
            } else {
                let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
                if !(det > 0.0) {
                    break;
                }
                (
                    (h[1][1] * g[0] - h[0][1] * g[1]) / det,
                    (h[0][0] * g[1] - h[1][0] * g[0]) / det,
                )
            };
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let (na, nc) = (a + t * da, c + t * dc);
                if na > 0.0 {
                    let nf = self.value(na, nc);
                    if nf >= f || (t * da).abs().max((t * dc).abs()) < 1e-6 {
                        a = na;
                        c = nc;
                        f = nf;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted || (t * da).abs().max((t * dc).abs()) < 1e-13 {
                break;
            }
        }
        (a, c)
    }
}

/// Fits a 2PL model by marginal maximum likelihood with EM. Responses that
/// are missing are left out of the likelihood.
pub fn fit_2pl(data: &ResponseMatrix, options: &IrtOptions) -> Result<IrtModel> {
    if options.quadrature_nodes < 2 || options.max_cycles == 0 || !(options.tolerance > 0.0) {
        return Err(Error::invalid("IRT options need >= 2 nodes, >= 1 cycle and a positive tolerance"));
    }
    if let Some(a) = options.fixed_discrimination {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::invalid("fixed discrimination must be positive"));
        }
    }
    let n_items = data.item_ids.len();
    let n_people = data.participant_ids.len();
    let observed: Vec<Vec<(usize, bool)>> = (0..n_people)
        .map(|p| (0..n_items).filter_map(|j| data.get(p, j).map(|u| (j, u))).collect())
        .collect();

    let mut a = vec![options.fixed_discrimination.unwrap_or(1.0); n_items];
    let mut c = vec![0.0; n_items];
    for j in 0..n_items {
        let (mut right, mut total) = (0usize, 0usize);
        for p in 0..n_people {
            if let Some(u) = data.get(p, j) {
                total += 1;
                right += usize::from(u);
            }
        }
        if right == 0 || right == total {
            return Err(Error::Degenerate(format!(
                "item `{}` has {right} correct of {total} responses; its parameters diverge",
                data.item_ids[j]
            )));
        }
        let pc = right as f64 / total as f64;
        c[j] = (pc / (1.0 - pc)).ln();
    }

    let (nodes, weights) = gauss_hermite_normal(options.quadrature_nodes);
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let nq = nodes.len();

    // E-step: returns (log-likelihood, expected counts n, expected correct r,
    // posterior means)
    let e_step = |a: &[f64], c: &[f64]| {
        let mut log_p = vec![0.0; n_items * nq];
        let mut log_q = vec![0.0; n_items * nq];
        for j in 0..n_items {
            for (q, x) in nodes.iter().enumerate() {
                let z = a[j] * x + c[j];
                log_p[j * nq + q] = -softplus(-z);
                log_q[j * nq + q] = -softplus(z);
            }
        }
        let mut ll = 0.0;
        let mut n = vec![0.0; n_items * nq];
        let mut r = vec![0.0; n_items * nq];
        let mut eap = Vec::with_capacity(n_people);
        let mut post = vec![0.0; nq];
        for obs in &observed {
            post.copy_from_slice(&log_w);
            for &(j, u) in obs {
                let row = if u { &log_p } else { &log_q };
                for q in 0..nq {
                    post[q] += row[j * nq + q];
                }
            }
            let max = post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = post.iter().map(|l| (l - max).exp()).sum();
            ll += max + z.ln();
            for l in post.iter_mut() {
                *l = (*l - max).exp() / z;
            }
            eap.push(post.iter().zip(&nodes).map(|(p, x)| p * x).sum::<f64>());
            for &(j, u) in obs {
                for q in 0..nq {
                    n[j * nq + q] += post[q];
                    if u {
                        r[j * nq + q] += post[q];
                    }
                }
            }
        }
        (ll, n, r, eap)
    };

    let mut trace = Vec::new();
    let mut converged = false;
    let mut cycles = 0;
    while cycles < options.max_cycles {
        let (ll, n, r, _) = e_step(&a, &c);
        trace.push(ll);
        cycles += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..n_items {
            let obj = ItemObjective {
                nodes: &nodes,
                n: &n[j * nq..(j + 1) * nq],
                r: &r[j * nq..(j + 1) * nq],
            };
            let (na, nc) = obj.maximize(a[j], c[j], options.fixed_discrimination.is_some());
            max_change = max_change.max((na - a[j]).abs()).max((-nc / na + c[j] / a[j]).abs());
            a[j] = na;
            c[j] = nc;
        }
        if max_change < options.tolerance {
            converged = true;
            break;
        }
    }
    let (ll, _, _, eap) = e_step(&a, &c);
    trace.push(ll);
    if trace.iter().any(|l| !l.is_finite()) {
        return Err(Error::Divergence { step: cycles });
    }

    Ok(IrtModel {
        items: (0..n_items)
            .map(|j| IrtItem {
                item_id: data.item_ids[j].clone(),
                a: a[j],
                b: -c[j] / a[j],
            })
            .collect(),
        abilities: data.participant_ids.iter().cloned().zip(eap).collect(),
        log_likelihood: trace,
        cycles,
        converged,
    })
}

/// CSV `item_id,a,b`.
pub fn write_irt_params(path: &Path, model: &IrtModel) -> Result<()> {
    item_bank::write_csv(path, model.items.iter())
}

/// Wide CSV: `theta`, one column per item, then `total`.
pub fn write_information_curves(path: &Path, model: &IrtModel) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let mut header = vec!["theta".to_string()];
    header.extend(model.items.iter().map(|i| i.item_id.clone()));
    header.push("total".into());
    let io = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(io)?;
    for (t, per, total) in model.information_curve(&theta_grid()) {
        let mut row = vec![format!("{t:.1}")];
        row.extend(per.iter().map(|v| v.to_string()));
        row.push(total.to_string());
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn quadrature_moments() {
        let (x, w) = gauss_hermite_normal(21);
        assert_eq!(x.len(), 21);
        let moment = |k: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert!((moment(0) - 1.0).abs() < 1e-13);
        assert!(moment(1).abs() < 1e-13);
        assert!((moment(2) - 1.0).abs() < 1e-12);
        assert!((moment(4) - 3.0).abs() < 1e-11);
        assert!((moment(6) - 15.0).abs() < 1e-10);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
        assert!(x[10].abs() < 1e-14);
    }

    #[test]
    fn information_values() {
        assert!((item_information(1.7, 0.3, 0.3) - 1.7 * 1.7 / 4.0).abs() < 1e-15);
        let p = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((item_information(2.0, 0.0, 1.0) - 4.0 * p * (1.0 - p)).abs() < 1e-15);
        assert!((item_information(2.0, 0.0, 1.0) - 0.4200).abs() < 1e-4);
        assert_eq!(item_information(1.0, 0.0, 1e4), 0.0);
        assert_eq!(item_information(1.0, 0.0, -1e4), 0.0);
    }

    proptest! {
        #[test]
        fn information_integrates_positive(a in 0.05f64..5.0, b in -3.0f64..3.0) {
            let (x, w) = gauss_hermite_normal(21);
            let total: f64 = x.iter().zip(&w).map(|(t, w)| w * item_information(a, b, *t)).sum();
            prop_assert!(total.is_finite() && total > 0.0);
        }
    }

    fn synthetic(n_people: usize, items: &[(f64, f64)], seed: u64, missing: f64) -> ResponseMatrix {
        let mut rng = seed::rng(seed);
        let mut cells = Vec::new();
        for _ in 0..n_people {
            let theta: f64 = rng.sample(StandardNormal);
            for &(a, b) in items {
                let u = rng.random::<f64>() < logistic(a * (theta - b));
                cells.push(if rng.random::<f64>() < missing { None } else { Some(u) });
            }
        }
        ResponseMatrix::new(
            (0..items.len()).map(|j| format!("i{j:02}")).collect(),
            (0..n_people).map(|p| format!("p{p:04}")).collect(),
            cells,
        )
        .unwrap()
    }

    #[test]
    fn em_ascends_and_recovers() {
        let mut rng = seed::rng(77);
        let truth: Vec<(f64, f64)> = (0..15)
            .map(|_| (rng.random_range(0.6..2.2), rng.random_range(-1.8..1.8)))
            .collect();
        let data = synthetic(800, &truth, 5, 0.05);
        let model = fit_2pl(&data, &IrtOptions::default()).unwrap();
        for w in model.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
        let bs: Vec<f64> = model.items.iter().map(|i| i.b).collect();
        let tb: Vec<f64> = truth.iter().map(|t| t.1).collect();
        assert!(crate::psychometrics::pearson_r(&bs, &tb).unwrap() > 0.95);
        assert!(model.converged);
    }

    #[test]
    fn median_split_item_centers_at_zero() {
        // one item answered correctly by exactly the upper half of abilities
        let mut thetas: Vec<f64> = {
            let mut rng = seed::rng(3);
            (0..400).map(|_| rng.sample(StandardNormal)).collect()
        };
        thetas.sort_by(f64::total_cmp);
        let cells = (0..400).map(|k| Some(k >= 200)).collect();
        let data = ResponseMatrix::new(vec!["x".into()], (0..400).map(|p| format!("p{p:03}")).collect(), cells).unwrap();
        let options = IrtOptions {
            fixed_discrimination: Some(1.5),
            ..IrtOptions::default()
        };
        let model = fit_2pl(&data, &options).unwrap();
        assert!(model.items[0].b.abs() < 1e-6, "{}", model.items[0].b);
        assert_eq!(model.items[0].a, 1.5);
    }

    #[test]
    fn participant_order_does_not_matter() {
        let truth = [(1.0, -0.5), (1.5, 0.0), (0.8, 0.7), (2.0, 0.2), (1.2, -1.0)];
        let data = synthetic(200, &truth, 9, 0.0);
        let fit = fit_2pl(&data, &IrtOptions::default()).unwrap();
        let n = data.participant_ids.len();
        let order: Vec<usize> = (0..n).rev().collect();
        let mut cells = Vec::new();
        for &p in &order {
            for j in 0..truth.len() {
                cells.push(data.get(p, j));
            }
        }
        let permuted = ResponseMatrix::new(
            data.item_ids.clone(),
            order.iter().map(|&p| data.participant_ids[p].clone()).collect(),
            cells,
        )
        .unwrap();
        let refit = fit_2pl(&permuted, &IrtOptions::default()).unwrap();
        for (x, y) in fit.items.iter().zip(&refit.items) {
            assert!((x.a - y.a).abs() < 1e-10 && (x.b - y.b).abs() < 1e-10, "{x:?} {y:?} {} {}", fit.cycles, refit.cycles);
        }
    }

    #[test]
    fn constant_item_is_named() {
        let cells = vec![Some(true), Some(true), Some(false), Some(true), Some(true), Some(true)];
        let data = ResponseMatrix::new(
            vec!["ok".into(), "easy".into()],
            vec!["p1".into(), "p2".into(), "p3".into()],
            cells,
        )
        .unwrap();
        match fit_2pl(&data, &IrtOptions::default()) {
            Err(Error::Degenerate(msg)) => assert!(msg.contains("`easy`")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn from_records_layout() {
        let rec = |p: &str, i: &str, c: bool| ResponseRecord {
            participant_id: p.into(),
            item_id: i.into(),
            response: c,
            correct: c,
            rt_ms: 1.0,
        };
        let rs = [rec("b", "x", true), rec("a", "y", false), rec("a", "z", true)];
        let m = ResponseMatrix::from_records(&rs, &["x".to_string(), "y".to_string()]);
        assert_eq!(m.participant_ids(), &["a".to_string(), "b".to_string()]);
        assert_eq!(m.get(0, 0), None);
        assert_eq!(m.get(0, 1), Some(false));
        assert_eq!(m.get(1, 0), Some(true));
    }

    #[test]
    fn curve_and_params_files() {
        let model = IrtModel {
            items: vec![IrtItem {
                item_id: "i1".into(),
                a: 2.0,
                b: 0.0,
            }],
            abilities: vec![],
            log_likelihood: vec![],
            cycles: 0,
            converged: true,
        };
        let dir = tempfile::tempdir().unwrap();
        write_irt_params(&dir.path().join("irt.csv"), &model).unwrap();
        let text = std::fs::read_to_string(dir.path().join("irt.csv")).unwrap();
        assert_eq!(text, "item_id,a,b\ni1,2.0,0.0\n");
        write_information_curves(&dir.path().join("info.csv"), &model).unwrap();
        let text = std::fs::read_to_string(dir.path().join("info.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "theta,i1,total");
        assert_eq!(lines.len(), 62);
        assert!(lines[1].starts_with("-3.0,"));
        assert!(lines[31].starts_with("0.0,1,1"));
    }
}
