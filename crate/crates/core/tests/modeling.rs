use geoharvest_core::geo::{BBox, GeoPoint, LocalProjection, PointQuality};
use geoharvest_core::model::*;
use geoharvest_core::sitegen::{generate_site, SyntheticSiteSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn row(i: usize, target: f64, dist: f64, size: f64, year: f64) -> FeatureRow {
    FeatureRow {
        id: format!("r{i}"),
        target,
        dist_center_m: dist,
        size_sqm: size,
        year_built: year,
        nfeatures: (i % 4) as u32,
        rooms: Some(2.0),
        amenities: vec![i.is_multiple_of(2), i.is_multiple_of(3)],
        plz: Some(format!("0410{}", i % 4)),
    }
}

fn cox_de_boor(t: &[f64], i: usize, p: usize, x: f64) -> f64 {
    if p == 0 {
        return if t[i] <= x && x < t[i + 1] { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    if t[i + p] != t[i] {
        v += (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(t, i, p - 1, x);
    }
    if t[i + p + 1] != t[i + 1] {
        v += (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(t, i + 1, p - 1, x);
    }
    v
}

/// Penalized fit of `y ~ α + Bγ` with `cᵀγ = 0` solved as one dense
/// saddle-point system; returns the system inverse and the basis matrix.
struct Oracle {
    basis: DMatrix<f64>,
    kkt_inv: DMatrix<f64>,
    k: usize,
}

impl Oracle {
    fn new(xs: &[f64], k: usize, lambda_eff: f64) -> Self {
        let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        let h = (hi - lo) / (k - 3) as f64;
        let knots: Vec<f64> = (0..k + 4).map(|j| lo + (j as f64 - 3.0) * h).collect();
        let n = xs.len();
        let top = hi - 1e-12 * (hi - lo);
        let basis = DMatrix::from_fn(n, k, |r, c| cox_de_boor(&knots, c, 3, xs[r].min(top)));
        // second-order differences
        let mut d = DMatrix::zeros(k - 2, k);
        for r in 0..k - 2 {
            d[(r, r)] = 1.0;
            d[(r, r + 1)] = -2.0;
            d[(r, r + 2)] = 1.0;
        }
        let pen = d.transpose() * d;
        let ones = DVector::from_element(n, 1.0);
        let c = basis.transpose() * &ones;
        let m = k + 2;
        let mut kkt = DMatrix::zeros(m, m);
        kkt[(0, 0)] = n as f64;
        for j in 0..k {
            kkt[(0, 1 + j)] = c[j];
            kkt[(1 + j, 0)] = c[j];
            kkt[(1 + j, k + 1)] = c[j];
            kkt[(k + 1, 1 + j)] = c[j];
        }
        let btb = basis.transpose() * &basis + pen * lambda_eff;
        kkt.view_mut((1, 1), (k, k)).copy_from(&btb);
        let kkt_inv = kkt.try_inverse().expect("invertible saddle system");
        Oracle { basis, kkt_inv, k }
    }

    fn design(&self) -> DMatrix<f64> {
        let n = self.basis.nrows();
        let mut x = DMatrix::from_element(n, self.k + 1, 1.0);
        x.view_mut((0, 1), (n, self.k)).copy_from(&self.basis);
        x
    }

    /// (intercept, γ)
    fn solve(&self, y: &DVector<f64>) -> (f64, DVector<f64>) {
        let x = self.design();
        let m = self.kkt_inv.view((0, 0), (self.k + 1, self.k + 1));
        let sol = m * (x.transpose() * y);
        (sol[0], sol.rows(1, self.k).into_owned())
    }

    fn hat(&self) -> DMatrix<f64> {
        let x = self.design();
        let m = self.kkt_inv.view((0, 0), (self.k + 1, self.k + 1)).into_owned();
        &x * m * x.transpose()
    }
}

fn one_smooth(lambda: f64) -> GamSpec {
    GamSpec {
        smooths: vec![SmoothTerm::new("dist_center_m", 10)],
        lambda_grid: vec![lambda],
        ..GamSpec::simple()
    }
}

fn wavy(n: usize, seed: u64) -> Vec<FeatureRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let d: f64 = rng.gen_range(0.0..8000.0);
            row(i, 8.0 + 2.0 * (d / 1300.0).sin() + rng.gen_range(-0.8..0.8), d, 60.0, 2000.0)
        })
        .collect()
}

fn varied(n: usize, seed: u64) -> Vec<FeatureRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let d: f64 = rng.gen_range(0.0..8000.0);
            let s: f64 = rng.gen_range(25.0..120.0);
            let t = 8.0 + 2.0 * (d / 1300.0).sin() - s / 60.0 + rng.gen_range(-0.8..0.8);
            row(i, t, d, s, rng.gen_range(1900.0..2020.0))
        })
        .collect()
}

#[test]
fn fixed_lambda_fit_matches_dense_saddle_point_solution() {
    let rows = wavy(200, 1);
    for lambda in [1e-3, 0.7, 50.0] {
        let design = GamDesign::new(&rows, &one_smooth(lambda)).unwrap();
        let model = fit_gam(&rows, &one_smooth(lambda)).unwrap();
        let scale = design.penalties()[0].scale;
        let xs: Vec<f64> = rows.iter().map(|r| r.dist_center_m).collect();
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.target));
        let (alpha, gamma) = Oracle::new(&xs, 10, lambda * scale).solve(&y);
        assert!((model.intercept - alpha).abs() < 1e-8, "{} vs {alpha}", model.intercept);
        let coef = model.smooth_coefficients("dist_center_m").unwrap();
        for (a, b) in coef.iter().zip(gamma.iter()) {
            assert!((a - b).abs() < 1e-8, "lambda {lambda}: {a} vs {b}");
        }
    }
}

#[test]
fn gcv_matches_dense_hat_matrix() {
    let rows = wavy(30, 2);
    let xs: Vec<f64> = rows.iter().map(|r| r.dist_center_m).collect();
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.target));
    for lambda in [1e-2, 1.0, 100.0] {
        let spec = one_smooth(lambda);
        let design = GamDesign::new(&rows, &spec).unwrap();
        let a = Oracle::new(&xs, 10, lambda * design.penalties()[0].scale).hat();
        let n = rows.len() as f64;
        let resid = &y - &a * &y;
        let expected = n * resid.dot(&resid) / (n - spec.gamma * a.trace()).powi(2);
        let got = design.gcv(&[lambda]);
        assert!((got - expected).abs() < 1e-8, "lambda {lambda}: {got} vs {expected}");
    }
}

#[test]
fn shrinkage_removes_irrelevant_smooth() {
    let mut hits = 0;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let rows: Vec<_> = (0..400)
            .map(|i| {
                let d: f64 = rng.gen_range(0.0..8000.0);
                let s: f64 = rng.gen_range(25.0..120.0);
                let yr: f64 = rng.gen_range(1900.0..2020.0);
                let t = 9.0 + 2.0 * (d / 1500.0).sin() + (s - 60.0) / 30.0 + rng.gen_range(-1.0..1.0);
                row(i, t, d, s, yr)
            })
            .collect();
        let spec = GamSpec {
            smooths: ["dist_center_m", "size_sqm", "year_built"].iter().map(|f| SmoothTerm::new(f, 10)).collect(),
            shrinkage: true,
            ..GamSpec::simple()
        };
        let m = fit_gam(&rows, &spec).unwrap();
        assert!(m.edf_of("s(dist_center_m)").unwrap() > 3.0);
        if m.edf_of("s(year_built)").unwrap() < 0.5 {
            hits += 1;
        }
    }
    assert!(hits >= 4, "{hits}/5");
}

#[test]
fn forest_beats_linear_fit_on_a_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mk = |rng: &mut ChaCha8Rng, i: usize| {
        let d: f64 = rng.gen_range(0.0..6000.0);
        let t = if d < 2500.0 { 12.0 } else { 7.0 } + rng.gen_range(-0.3..0.3);
        row(i, t, d, rng.gen_range(30.0..90.0), rng.gen_range(1950.0..2020.0))
    };
    let train: Vec<_> = (0..300).map(|i| mk(&mut rng, i)).collect();
    let test: Vec<_> = (300..600).map(|i| mk(&mut rng, i)).collect();
    let forest = fit_random_forest(&train, FeatureEncoder::Simple, &ForestParams { n_trees: 100, ..Default::default() }, 3).unwrap();
    let f_rmse = evaluate(&FittedModel::forest(forest, &[], &train), &test).unwrap().rmse;
    // ordinary least squares on the four simple features
    let enc = |r: &FeatureRow| vec![1.0, r.dist_center_m, r.size_sqm, r.year_built, r.nfeatures as f64];
    let x = DMatrix::from_fn(train.len(), 5, |i, j| enc(&train[i])[j]);
    let y = DVector::from_iterator(train.len(), train.iter().map(|r| r.target));
    let beta = (x.transpose() * &x).lu().solve(&(x.transpose() * y)).unwrap();
    let l_rmse = (test
        .iter()
        .map(|r| (enc(r).iter().zip(beta.iter()).map(|(a, b)| a * b).sum::<f64>() - r.target).powi(2))
        .sum::<f64>()
        / test.len() as f64)
        .sqrt();
    assert!(f_rmse < l_rmse, "{f_rmse} vs {l_rmse}");
}

#[test]
fn saved_models_predict_identically() {
    let rows = varied(150, 6);
    let vocab = vec!["balcony".to_string(), "parking".to_string()];
    let gam = FittedModel::gam(fit_gam(&rows, &GamSpec::shrinkage_extended(2)).unwrap(), &vocab, &rows);
    let forest = FittedModel::forest(
        fit_random_forest(&rows, FeatureEncoder::extended(&rows), &ForestParams { n_trees: 40, ..Default::default() }, 9).unwrap(),
        &vocab,
        &rows,
    );
    for m in [gam, forest] {
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = FittedModel::load(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        for r in &rows {
            assert_eq!(back.predict(r).unwrap().to_bits(), m.predict(r).unwrap().to_bits());
        }
        let mut bad = buf.clone();
        bad[8] = 99;
        assert!(matches!(FittedModel::load(bad.as_slice()), Err(ModelError::Format(_))));
    }
}

#[test]
fn evaluation_basics() {
    let rows: Vec<_> = (0..40).map(|i| row(i, 7.5, i as f64, 50.0, 2000.0)).collect();
    let (train, test) = split_train_test(&rows, 25, 1);
    assert_eq!((train.len(), test.len()), (25, 15));
    let forest = fit_random_forest(&train, FeatureEncoder::Simple, &ForestParams { n_trees: 10, ..Default::default() }, 1).unwrap();
    let m = FittedModel::forest(forest, &[], &train);
    let e = evaluate(&m, &test).unwrap();
    assert_eq!(e.rmse, 0.0);
    assert_eq!(e.r2_adj, None);
    assert!(matches!(evaluate(&m, &train[..3]), Err(ModelError::Overlap(3))));

    // an intercept-only model on a standardized target
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let std_rows: Vec<_> = (0..2000).map(|i| row(i, rng.gen_range(-1.0..1.0) * 3f64.sqrt(), 0.0, 0.0, 0.0)).collect();
    let mean_only = GamModel {
        spec: GamSpec::simple(),
        intercept: 0.0,
        terms: Vec::new(),
        lambdas: Vec::new(),
        edf: Vec::new(),
        edf_total: 1.0,
        gcv: 0.0,
        r2_adj: 0.0,
        rmse: 0.0,
        n_train: 0,
    };
    let e = evaluate(&FittedModel::gam(mean_only, &[], &[]), &std_rows).unwrap();
    assert!(e.r2.abs() < 0.01, "{}", e.r2);
    assert!(e.r2_adj.unwrap().abs() < 0.01);
}

#[test]
fn oob_error_tracks_holdout_error() {
    let spec = SyntheticSiteSpec {
        n_listings: 3000,
        seed: 77,
        ..Default::default()
    };
    let site = generate_site(&spec).unwrap();
    let (train, test) = split_train_test(&site.manifest.rows(), 1000, 77);
    let f = fit_random_forest(&train, FeatureEncoder::extended(&train), &ForestParams::default(), 77).unwrap();
    let oob = f.oob_rmse.unwrap();
    let holdout = evaluate(&FittedModel::forest(f, &site.manifest.vocab, &train), &test).unwrap().rmse;
    assert!((oob - holdout).abs() <= 0.15 * holdout, "oob {oob} holdout {holdout}");
}

#[test]
fn grid_layout_and_center_consistency() {
    let rows = varied(200, 8);
    let vocab: Vec<String> = DEFAULT_VOCAB.iter().map(|s| s.to_string()).collect();
    let model = FittedModel::gam(fit_gam(&rows, &GamSpec::simple()).unwrap(), &vocab, &rows);
    // a bbox exactly ten 100 m cells on each side
    let center = GeoPoint::new(51.34, 12.37, PointQuality::Geocoded).unwrap();
    let proj = LocalProjection::new(&center);
    let (s, w) = proj.inverse(-500.0, -500.0);
    let (n, e) = proj.inverse(500.0, 500.0);
    let bbox = BBox::new(s, n, w, e).unwrap();
    let grid = prediction_grid(&model, &bbox, 100.0, &FeatureProfile::default(), &center, None).unwrap();
    assert_eq!((grid.nx, grid.ny, grid.cells.len()), (10, 10, 100));
    let p = LocalProjection::new(&bbox.center());
    let xs: Vec<f64> = grid.cells.iter().filter(|c| c.row == 3).map(|c| p.forward(c.center.lat, c.center.lon).0).collect();
    for w in xs.windows(2) {
        assert!((w[1] - w[0] - 100.0).abs() < 1e-6);
    }
    let cell = &grid.cells[55];
    let direct = model
        .predict(&FeatureProfile::default().row("probe", cell.dist_center_m, None, &vocab))
        .unwrap();
    assert_eq!(cell.pred_eur_sqm, direct);
    let gj = grid.to_geojson();
    assert_eq!(gj["type"], "FeatureCollection");
    let f0 = &gj["features"][0];
    assert_eq!(f0["geometry"]["type"], "Polygon");
    let ring = f0["geometry"]["coordinates"][0].as_array().unwrap();
    assert_eq!(ring.len(), 5);
    assert_eq!(ring[0], ring[4]);
    assert!(f0["properties"]["pred_eur_sqm"].is_f64());
}

#[test]
fn feature_rows_and_csv() {
    use chrono::TimeZone;
    use geoharvest_core::extractor::{ListingRecord, ParsedNumber, Unit};
    let at = chrono::Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let mut r = ListingRecord::empty("a", "", at);
    r.rent_net_eur = Some(ParsedNumber::exact(500.0, Unit::Eur));
    r.size_sqm = Some(ParsedNumber::exact(50.0, Unit::Sqm));
    r.year_built = Some(1990);
    r.dist_center_m = Some(1200.0);
    r.amenities = ["balcony", "basement", "sauna"].iter().map(|s| s.to_string()).collect();
    let mut incomplete = r.clone();
    incomplete.id = "b".into();
    incomplete.year_built = None;
    let vocab: Vec<String> = DEFAULT_VOCAB.iter().map(|s| s.to_string()).collect();
    let center = GeoPoint::new(51.34, 12.37, PointQuality::Geocoded).unwrap();
    let fs = build_features(&[r, incomplete], &center, &vocab);
    assert_eq!((fs.rows.len(), fs.dropped), (1, 1));
    assert_eq!(fs.rows[0].target, 10.0);
    assert_eq!(fs.rows[0].nfeatures, 2);
    let mut buf = Vec::new();
    fs.write_csv(&mut buf).unwrap();
    let back = FeatureSet::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.rows, fs.rows);
    assert_eq!(back.vocab, vocab);
}
