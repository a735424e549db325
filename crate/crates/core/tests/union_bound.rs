use num_complex::Complex64;
use rand::seq::SliceRandom;
use smlink::analysis::{
    complexity_report, pep_exact, union_bound_aber, union_bound_raw, PepMode, PepTerm,
};
use smlink::channel::{exponential_correlation, hermitian_eigenvalues, CorrelationSpec};
use smlink::modem::QamConstellation;
use smlink::rng::rng_from_seed;

/// Average of `Q(sqrt(2 g))` over `L` i.i.d. Rayleigh branches with mean
/// per-branch `g = c`, in closed form.
fn mrc_closed_form(c: f64, branches: u32) -> f64 {
    let mu = (c / (1.0 + c)).sqrt();
    let mut sum = 0.0;
    let mut binom = 1.0;
    for k in 0..branches {
        if k > 0 {
            binom *= f64::from(branches - 1 + k) / f64::from(k);
        }
        sum += binom * ((1.0 + mu) / 2.0).powi(k as i32);
    }
    ((1.0 - mu) / 2.0).powi(branches as i32) * sum
}

/// Union bound with identity correlations, written out from the definition:
/// every ordered pair of bit words, antennas relabelled by `perm`.
fn iid_union_bound_oracle(nt: usize, nr: usize, order: usize, noise_var: f64, perm: &[usize]) -> f64 {
    let c = QamConstellation::new(order).unwrap();
    let k = order.trailing_zeros();
    let m = nt.trailing_zeros() + k;
    let words = 1usize << m;
    let vector = |w: usize| {
        let mut x = vec![Complex64::new(0.0, 0.0); nt];
        x[perm[w >> k]] = c.point(w & (order - 1));
        x
    };
    let mut total = 0.0;
    for a in 0..words {
        for b in 0..words {
            if a == b {
                continue;
            }
            let (xa, xb) = (vector(a), vector(b));
            let mu: f64 = xa.iter().zip(&xb).map(|(p, q)| (p - q).norm_sqr()).sum();
            let n = (a ^ b).count_ones();
            total += f64::from(n) * mrc_closed_form(mu / (4.0 * noise_var), nr as u32);
        }
    }
    total / (f64::from(m) * words as f64)
}

#[test]
fn closed_form_oracle_single_branch_sanity() {
    let c = 2.5;
    assert!((mrc_closed_form(c, 1) - 0.5 * (1.0 - (c / (1.0 + c)).sqrt())).abs() < 1e-15);
}

#[test]
fn exact_pep_matches_multibranch_closed_form() {
    for nr in 1..=6u32 {
        for i in 0..=30 {
            let c = 10f64.powf(-2.0 + 4.0 * f64::from(i) / 30.0);
            let term = PepTerm::from_mu(1.0, vec![1.0; nr as usize]);
            let got = pep_exact(&term, 1.0 / (4.0 * c)).unwrap();
            let want = mrc_closed_form(c, nr);
            assert!((got - want).abs() < 1e-9, "Nr={nr} c={c}: {got} vs {want}");
        }
    }
}

#[test]
fn siso_bpsk_reduces_to_classical_bound() {
    let c = QamConstellation::new(2).unwrap();
    let spec = CorrelationSpec::identity(1, 1).unwrap();
    for snr_db in [0.0, 5.0, 10.0, 20.0, 30.0] {
        let snr = 10f64.powf(snr_db / 10.0);
        let got = union_bound_aber(1, &c, &spec, 1.0 / snr, PepMode::Exact).unwrap();
        let want = 0.5 * (1.0 - (snr / (1.0 + snr)).sqrt());
        assert!((got - want).abs() < 1e-9, "{snr_db} dB: {got} vs {want}");
    }
}

#[test]
fn iid_bound_matches_definition_and_is_permutation_invariant() {
    let mut rng = rng_from_seed(8);
    for (nt, nr, order) in [(4, 4, 4), (2, 1, 2), (8, 2, 2), (2, 3, 16)] {
        let c = QamConstellation::new(order).unwrap();
        let spec = CorrelationSpec::identity(nt, nr).unwrap();
        for snr_db in [0.0, 8.0, 16.0] {
            let nv = 10f64.powf(-snr_db / 10.0);
            let got = union_bound_raw(nt, &c, &spec, nv, PepMode::Exact).unwrap();
            let mut perm: Vec<usize> = (0..nt).collect();
            let plain = iid_union_bound_oracle(nt, nr, order, nv, &perm);
            perm.shuffle(&mut rng);
            let shuffled = iid_union_bound_oracle(nt, nr, order, nv, &perm);
            assert!((got - plain).abs() < 1e-9 * plain.max(1e-3), "{got} vs {plain}");
            assert!((plain - shuffled).abs() < 1e-12 * plain.max(1e-3));
        }
    }
}

#[test]
fn chernoff_bound_dominates_exact_bound() {
    let mut configs = Vec::new();
    for (nt, nr, order) in [(4, 4, 4), (2, 2, 2), (8, 4, 2), (4, 2, 16), (1, 4, 4)] {
        configs.push((nt, nr, order, CorrelationSpec::identity(nt, nr).unwrap()));
        for (bt, br) in [(0.5, 0.8), (0.7, 0.4), (0.1, 0.1)] {
            configs.push((nt, nr, order, CorrelationSpec::exponential(nt, nr, bt, br).unwrap()));
        }
    }
    for (nt, _nr, order, spec) in configs {
        let c = QamConstellation::new(order).unwrap();
        for snr_db in [-5.0, 5.0, 15.0, 25.0] {
            let nv = 10f64.powf(-snr_db / 10.0);
            let exact = union_bound_raw(nt, &c, &spec, nv, PepMode::Exact).unwrap();
            let chernoff = union_bound_raw(nt, &c, &spec, nv, PepMode::Chernoff).unwrap();
            assert!(exact >= 0.0);
            assert!(chernoff >= exact, "{chernoff} < {exact}");
            let clipped = union_bound_aber(nt, &c, &spec, nv, PepMode::Exact).unwrap();
            assert!((0.0..=0.5).contains(&clipped));
        }
    }
}

#[test]
fn correlated_bounds_differ_and_exceed_iid() {
    let c = QamConstellation::new(4).unwrap();
    let nv = 0.1;
    let iid = union_bound_aber(4, &c, &CorrelationSpec::identity(4, 4).unwrap(), nv, PepMode::Exact).unwrap();
    let a = CorrelationSpec::exponential(4, 4, 0.5, 0.8).unwrap();
    let b = CorrelationSpec::exponential(4, 4, 0.7, 0.4).unwrap();
    let ba = union_bound_aber(4, &c, &a, nv, PepMode::Exact).unwrap();
    let bb = union_bound_aber(4, &c, &b, nv, PepMode::Exact).unwrap();
    assert!(ba > iid && bb > iid);
    assert!((ba - bb).abs() > 1e-3 * ba);
}

#[test]
fn pep_term_mu_and_eigenvalues() {
    let r = exponential_correlation(4, 0.5).unwrap();
    let eig = hermitian_eigenvalues(&exponential_correlation(4, 0.8).unwrap()).unwrap();
    assert!((eig.iter().sum::<f64>() - 4.0).abs() < 1e-12);
    let st = Complex64::new(0.7, -0.7);
    let s = Complex64::new(-0.7, 0.7);
    let t = PepTerm::new((1, st), (3, s), &r, eig.clone()).unwrap();
    let want = st.norm_sqr() + s.norm_sqr() - 2.0 * (st * s.conj() * r[(2, 0)]).re;
    assert!((t.mu - want).abs() < 1e-15);
    let same = PepTerm::new((2, st), (2, s), &r, eig.clone()).unwrap();
    assert!((same.mu - (st - s).norm_sqr()).abs() < 1e-15);
    assert!(PepTerm::new((5, st), (1, s), &r, eig).is_err());
}

#[test]
fn complexity_counts() {
    for nt in [1usize, 2, 4, 8, 16, 64, 128, 256] {
        for nr in [1usize, 2, 4, 8] {
            for m in [1u32, 4, 8, 12, 20] {
                let r = complexity_report(nt, nr, m).unwrap();
                let search: u128 = (0..m).fold(1, |acc, _| acc * 2);
                assert_eq!(r.c_sm, 8 * nr as u128 * search);
                assert_eq!(r.c_smx, 4 * (nt as u128 + 1) * nr as u128 * search);
                let from_counts = 100.0 * (1.0 - r.c_sm as f64 / r.c_smx as f64);
                assert!((r.c_rel - from_counts).abs() < 1e-9);
            }
        }
    }
    assert_eq!(format!("{:.3}", complexity_report(4, 4, 4).unwrap().c_rel), "60.000");
    let big = complexity_report(128, 4, 8).unwrap().c_rel;
    assert!((big - 100.0 * 127.0 / 129.0).abs() < 1e-12);
    assert!((big - 98.449).abs() < 1e-3);
    assert_eq!(complexity_report(1, 4, 4).unwrap().c_rel, 0.0);
}
