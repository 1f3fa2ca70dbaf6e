#![allow(dead_code)]

use epochttf::estimate::ParamSet;
use epochttf::model::{Dataset, Epoch, Event, EventType};
use statrs::function::gamma::ln_gamma;

pub fn theta1() -> ParamSet {
    ParamSet::new(0.03, 0.08, 70.0, 0.70).unwrap()
}

pub fn theta2() -> ParamSet {
    ParamSet::new(0.03, 0.03, 68.0, 0.67).unwrap()
}

pub fn theta3() -> ParamSet {
    ParamSet::new(0.03, 0.02, 72.0, 0.73).unwrap()
}

/// Neumaier-compensated accumulator.
#[derive(Default)]
pub struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn ksum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Compensated::default();
    values.into_iter().for_each(|v| acc.add(v));
    acc.value()
}

/// Log-likelihood summed event by event from the raw densities: shifted
/// Poisson for the count, Bernoulli for the first state and an exponential
/// density for every running event.
pub fn density_loglik(lambda1: f64, lambda2: f64, mu: f64, p: f64, d: &Dataset) -> f64 {
    let (ln1, ln2, ln_mu) = (lambda1.ln(), lambda2.ln(), mu.ln());
    let mut acc = Compensated::default();
    for epoch in &d.epochs {
        let mut k = 0usize;
        let mut first = None;
        for ev in epoch.events.iter().filter(|e| e.kind != EventType::Fail) {
            first.get_or_insert(ev.kind);
            k += 1;
            match ev.kind {
                EventType::RunOk => acc.add(ln1 - lambda1 * ev.duration),
                _ => acc.add(ln2 - lambda2 * ev.duration),
            }
        }
        let extra = (k - 1) as f64;
        acc.add(-mu);
        if extra > 0.0 {
            acc.add(extra * ln_mu);
        }
        acc.add(-ln_gamma(extra + 1.0));
        acc.add(if first == Some(EventType::RunOk) { p.ln() } else { (1.0 - p).ln() });
    }
    acc.value()
}

/// Downhill simplex minimization.
/// Stops after `iterations` or once the simplex values agree to `ftol`
/// relative.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], step: f64, iterations: usize, ftol: f64) -> Vec<f64> {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = (0..=n)
        .map(|i| {
            let mut x = x0.to_vec();
            if i > 0 {
                x[i - 1] += step;
            }
            let fx = f(&x);
            (x, fx)
        })
        .collect();
    for _ in 0..iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[n].1 - simplex[0].1).abs() <= ftol * simplex[0].1.abs() {
            break;
        }
        let centroid: Vec<f64> =
            (0..n).map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (worst.0[j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let xc = if fr < worst.1 { along(-0.5) } else { along(0.5) };
            let fc = f(&xc);
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for item in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = (0..n).map(|j| best[j] + 0.5 * (item.0[j] - best[j])).collect();
                    let fx = f(&x);
                    *item = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex[0].0.clone()
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, rel_tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > rel_tol * lo.abs().max(hi.abs()).max(1e-300) {
        if fa >= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    if fa >= fb {
        a
    } else {
        b
    }
}

/// Numerical maximizer of [`density_loglik`]: a simplex search in
/// unconstrained coordinates (log rates, logit p) from a generic start,
/// polished by cyclic golden-section searches. Returns `(l1, l2, mu, p)`.
pub fn numerical_mle(d: &Dataset) -> [f64; 4] {
    let mean_dur = {
        let evs: Vec<f64> = d.epochs.iter().flat_map(|e| e.running()).map(|e| e.duration).collect();
        evs.iter().sum::<f64>() / evs.len() as f64
    };
    let unpack = |x: &[f64]| [x[0].exp(), x[1].exp(), x[2].exp(), 1.0 / (1.0 + (-x[3]).exp())];
    let objective = |x: &[f64]| {
        let [l1, l2, mu, p] = unpack(x);
        let v = -density_loglik(l1, l2, mu, p, d);
        if v.is_finite() {
            v
        } else {
            f64::MAX
        }
    };
    let start = [(1.0 / mean_dur).ln(), (1.0 / mean_dur).ln(), 10f64.ln(), 0.0];
    let mut x = nelder_mead(objective, &start, 0.5, 5000, 1e-13);
    x = nelder_mead(objective, &x, 0.01, 5000, 1e-14);
    let mut theta = unpack(&x);

    for _sweep in 0..2 {
        for k in 0..4 {
            let eval = |v: f64| {
                let mut t = theta;
                t[k] = v;
                let r = density_loglik(t[0], t[1], t[2], t[3], d);
                if r.is_nan() {
                    f64::NEG_INFINITY
                } else {
                    r
                }
            };
            theta[k] = if k == 3 {
                golden_max(eval, 0.0, 1.0, 1e-12)
            } else {
                golden_max(eval, theta[k] * 0.5, theta[k] * 1.5, 1e-12)
            };
        }
    }
    theta
}

/// Mean epoch duration by summing the conditional means over the Poisson
/// count, odd and even counts separately, truncated at
/// `mu + 20 sqrt(mu) + 50` extra events.
pub fn series_ttf(t: &ParamSet) -> f64 {
    let (l1, l2, mu, p) = (t.lambda1, t.lambda2, t.mu, t.p);
    let kmax = (mu + 20.0 * mu.sqrt() + 50.0).ceil() as u64;
    let mut odd = Vec::new();
    let mut even = Vec::new();
    for k in 0..=kmax {
        let pmf = if mu == 0.0 {
            if k == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            (-mu + k as f64 * mu.ln() - ln_gamma(k as f64 + 1.0)).exp()
        };
        let r = (k + 1) as f64;
        if (k + 1) % 2 == 1 {
            let start_ok = (r + 1.0) / 2.0 / l1 + (r - 1.0) / 2.0 / l2;
            let start_alert = (r - 1.0) / 2.0 / l1 + (r + 1.0) / 2.0 / l2;
            odd.push(pmf * (p * start_ok + (1.0 - p) * start_alert));
        } else {
            even.push(pmf * (r / 2.0) * (1.0 / l1 + 1.0 / l2));
        }
    }
    ksum(odd) + ksum(even)
}

/// 45 epochs with the reference counts: N1 = 1606, N2 = 1584, n1 + n2 = 35,
/// and durations chosen so that the rates come out at 0.0261 and 0.0738.
pub fn reference_dataset() -> Dataset {
    let ok = 1.0 / 0.0261;
    let alert = 1.0 / 0.0738;
    let build = |id: u64, first: EventType, r: usize| {
        let mut kind = first;
        let mut events = Vec::with_capacity(r + 1);
        for _ in 0..r {
            events.push(Event::new(kind, if kind == EventType::RunOk { ok } else { alert }, vec![]));
            kind = kind.flip();
        }
        events.push(Event::fail());
        Epoch::new(id, events)
    };
    let mut epochs = Vec::new();
    let mut id = 0;
    let mut push = |first, r, count| {
        for _ in 0..count {
            id += 1;
            epochs.push(build(id, first, r));
        }
    };
    // S1: 22 x r = 71 (36 + 35). S2: 13 even-r RunOk starts. S4: 10 even-r alert starts.
    push(EventType::RunOk, 71, 22);
    push(EventType::RunOk, 72, 9);
    push(EventType::RunOk, 70, 4);
    push(EventType::RunAlert, 70, 10);
    Dataset::new(epochs, vec![]).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn log_factorial(k: usize) -> f64 {
    ln_gamma(k as f64 + 1.0)
}
