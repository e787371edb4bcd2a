mod common;

use common::{outlet_1d, setup, solver, talbot};
use num_complex::Complex64;
use poreflow::geometry::GeometryConfig;
use poreflow::transport::Isotherm;

#[test]
fn talbot_inverts_known_transforms() {
    for t in [0.5, 2.0, 10.0] {
        let exp = talbot(|s| 1.0 / (s + 1.0), t, 32);
        assert!((exp - (-t as f64).exp()).abs() < 1e-10, "t={t}: {exp}");
        let step = talbot(|s| 1.0 / s, t, 32);
        assert!((step - 1.0).abs() < 1e-10);
    }
    // erfc(1 / (2 sqrt t)) has transform exp(-sqrt s) / s.
    let v = talbot(|s: Complex64| (-s.sqrt()).exp() / s, 1.0, 32);
    assert!((v - 0.479_500_122_186_953_5).abs() < 1e-10, "{v}");
}

#[test]
fn oracle_limits() {
    // Nothing arrives early; everything has arrived late.
    let early = outlet_1d(10.0, 17.5, 5.0);
    assert!(early.abs() < 1e-6, "{early}");
    assert!((outlet_1d(10.0, 17.5, 60.0) - 1.0).abs() < 1e-6);
    // Front passes the outlet near t = L.
    let mid = outlet_1d(10.0, 17.5, 17.5);
    assert!((0.4..0.6).contains(&mid), "{mid}");
}

#[test]
fn empty_channel_matches_1d_oracle() {
    let (mesh, flow) = setup(&GeometryConfig::empty_channel(17.5, 1.0), 0.1);
    let s = solver(&mesh, &flow, 10.0, 0.1);
    let curve = s
        .breakthrough(Isotherm::Henry { da_a: 0.0, da_d: 0.0 }, 400)
        .unwrap();
    let err = curve
        .times
        .iter()
        .zip(&curve.values)
        .map(|(&t, &c)| (c - outlet_1d(10.0, 17.5, t)).abs())
        .fold(0.0, f64::max);
    assert!(err < 2e-2, "sup-norm error {err}");
}
