//! t-test and ANCOVA checked against independent implementations: statrs for
//! the distributions, nalgebra least squares for the regression.

use coached_eval::{ancova_group_length, t_test, welch_t, Observation, Source, TTestVariant};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};

const REL_TOL: f64 = 1e-9;
const P_FLOOR: f64 = 1e-6;

fn close(got: f64, want: f64) -> bool {
    let scale = want.abs().max(1e-300);
    (got - want).abs() / scale <= REL_TOL || (got - want).abs() <= 1e-15
}

fn naive_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn welch_oracle(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let (ma, va) = naive_var(a);
    let (mb, vb) = naive_var(b);
    let (qa, qb) = (va / a.len() as f64, vb / b.len() as f64);
    let t = (ma - mb) / (qa + qb).sqrt();
    let df = (qa + qb).powi(2) / (qa * qa / (a.len() as f64 - 1.0) + qb * qb / (b.len() as f64 - 1.0));
    let p = 2.0 * StudentsT::new(0.0, 1.0, df).unwrap().sf(t.abs());
    (t, df, p)
}

fn residualize(x: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let beta = x.clone().svd(true, true).solve(v, 1e-12).unwrap();
    v - x * beta
}

/// F for the group term by Frisch–Waugh: ΔRSS = (r_gᵀ r_y)² / (r_gᵀ r_g)
/// with both residualized on [1, length]. Length is centered and scaled
/// first; that leaves the column space unchanged and keeps the SVD well
/// conditioned.
fn ancova_oracle(obs: &[Observation]) -> (f64, f64) {
    let n = obs.len();
    let lengths: Vec<f64> = obs.iter().map(|o| o.length_chars as f64).collect();
    let (m, v) = naive_var(&lengths);
    let z: Vec<f64> = lengths.iter().map(|l| (l - m) / v.sqrt()).collect();
    let base = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { z[i] });
    let full = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => z[i],
        _ => f64::from(u8::from(obs[i].group == Source::Vsc)),
    });
    let y = DVector::from_fn(n, |i, _| obs[i].score);
    let g = full.column(2).into_owned();
    let ry = residualize(&base, &y);
    let rg = residualize(&base, &g);
    let delta = rg.dot(&ry).powi(2) / rg.dot(&rg);
    let rss_full = residualize(&full, &y).norm_squared();
    let df = (n - 3) as f64;
    let f = delta / (rss_full / df);
    (f, FisherSnedecor::new(1.0, df).unwrap().sf(f))
}

fn scores(rng: &mut ChaCha8Rng, n: usize, lo: u8, hi: u8) -> Vec<f64> {
    (0..n).map(|_| f64::from(rng.random_range(lo..=hi))).collect()
}

#[test]
fn welch_matches_oracle_on_random_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for _ in 0..300 {
        let (na, nb) = (rng.random_range(2..60), rng.random_range(2..60));
        let a: Vec<f64> = (0..na).map(|_| rng.random_range(-50.0..50.0)).collect();
        let shift = rng.random_range(-10.0..10.0);
        let b: Vec<f64> = (0..nb).map(|_| rng.random_range(-30.0..30.0) + shift).collect();
        let got = welch_t(&a, &b).unwrap();
        let (t, df, p) = welch_oracle(&a, &b);
        assert!(close(got.t, t), "t {} vs {t}", got.t);
        assert!(close(got.df, df), "df {} vs {df}", got.df);
        if p >= P_FLOOR {
            assert!(close(got.p_two_tailed, p), "p {} vs {p}", got.p_two_tailed);
            checked += 1;
        }
    }
    assert!(checked >= 100);
}

#[test]
fn pooled_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let (na, nb) = (rng.random_range(3..40), rng.random_range(3..40));
        let a = scores(&mut rng, na, 1, 5);
        let b = scores(&mut rng, nb, 1, 5);
        let Ok(got) = t_test(&a, &b, TTestVariant::Pooled) else {
            continue;
        };
        let (ma, va) = naive_var(&a);
        let (mb, vb) = naive_var(&b);
        let df = (a.len() + b.len() - 2) as f64;
        let sp2 = ((a.len() as f64 - 1.0) * va + (b.len() as f64 - 1.0) * vb) / df;
        let t = (ma - mb) / (sp2 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
        let p = 2.0 * StudentsT::new(0.0, 1.0, df).unwrap().sf(t.abs());
        assert!(close(got.t, t));
        if p >= P_FLOOR {
            assert!(close(got.p_two_tailed, p));
        }
    }
}

#[test]
fn identical_groups_give_null_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let a: Vec<f64> = (0..rng.random_range(2..30))
            .map(|_| rng.random_range(0.0..10.0))
            .collect();
        let mut b = a.clone();
        b.reverse();
        for variant in [TTestVariant::Welch, TTestVariant::Pooled] {
            let r = t_test(&a, &b, variant).unwrap();
            assert_eq!(r.t, 0.0);
            assert_eq!(r.p_two_tailed, 1.0);
        }
    }
}

fn random_observations(rng: &mut ChaCha8Rng) -> Vec<Observation> {
    let n = rng.random_range(8..150);
    let effect = rng.random_range(0.0..1.5);
    let mut obs: Vec<Observation> = (0..n)
        .map(|i| {
            let group = if i % 2 == 0 { Source::Vsc } else { Source::Appropriate };
            let length_chars = rng.random_range(40..900);
            let noise: f64 = rng.random_range(-1.5..1.5);
            let mean = 3.0 + if group == Source::Vsc { effect } else { 0.0 } + length_chars as f64 / 1000.0;
            let score = (mean + noise).round().clamp(1.0, 5.0);
            Observation {
                score,
                group,
                length_chars,
            }
        })
        .collect();
    // guarantee some spread in y
    obs[0].score = 1.0;
    obs[1].score = 5.0;
    obs
}

#[test]
fn ancova_matches_oracle_on_random_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut checked = 0;
    for _ in 0..200 {
        let obs = random_observations(&mut rng);
        let got = ancova_group_length(&obs).unwrap();
        let (f, p) = ancova_oracle(&obs);
        assert_eq!(got.df_residual, obs.len() - 3);
        assert!(close(got.f_group, f), "F {} vs {f}", got.f_group);
        if p >= P_FLOOR {
            assert!(close(got.p_group, p), "p {} vs {p}", got.p_group);
            checked += 1;
        }
    }
    assert!(checked >= 100);
}

#[test]
fn ancova_with_identical_groups_is_null() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let half: Vec<(f64, usize)> = (0..20)
        .map(|_| (f64::from(rng.random_range(1u8..=5)), rng.random_range(50..500)))
        .collect();
    let obs: Vec<Observation> = [Source::Vsc, Source::Appropriate]
        .iter()
        .flat_map(|&group| {
            half.iter().map(move |&(score, length_chars)| Observation {
                score,
                group,
                length_chars,
            })
        })
        .collect();
    let r = ancova_group_length(&obs).unwrap();
    assert_eq!(r.f_group, 0.0);
    assert_eq!(r.p_group, 1.0);
}
