//! Loss and metric identities plus report aggregation against hand-derived
//! values.

use maskseg::diffgrid::Grid;
use maskseg::metrics::{com_distance, dice_coefficient, EvalReport, ReportRow, StructureMetrics};
use maskseg::pipeline::{BinaryMask, Geometry, Image3};
use maskseg::training::dice_loss_value;
use maskseg::RngState;

fn mask_grid(m: &BinaryMask) -> Grid {
    let [d, h, w] = m.geom.dims;
    Grid::from_vec(&[1, 1, d, h, w], m.data.iter().map(|&v| v as f32).collect()).unwrap()
}

fn check(ok: bool, what: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what.into())
    }
}

pub fn loss_and_metric_identities() -> Result<String, String> {
    let eps = 1e-6;
    let g = Grid::from_vec(
        &[1, 1, 2, 2, 2],
        vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
    )
    .unwrap();
    let same = dice_loss_value(&g, &g, eps).map_err(|e| e.to_string())?;
    check(same <= 1e-6, format!("loss(p=g) = {same}"))?;
    let disjoint = Grid::from_vec(g.shape(), g.data().iter().map(|v| 1.0 - v).collect()).unwrap();
    let dj = dice_loss_value(&disjoint, &g, eps).map_err(|e| e.to_string())?;
    check(dj == 1.0, format!("loss(disjoint) = {dj}"))?;
    let half =
        dice_loss_value(&Grid::full(&[1, 1, 2, 2, 2], 0.5), &g, 0.0).map_err(|e| e.to_string())?;
    check(
        half == (1.0f32 / 3.0) as f64,
        format!("worked example = {half}"),
    )?;

    let mut rng = RngState::new(31);
    let geom = Geometry::new([6, 5, 7], [1.0; 3], [0.0; 3]).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let p: BinaryMask = Image3::new(
            geom,
            (0..geom.len())
                .map(|_| (rng.uniform() < 0.3) as u8)
                .collect(),
        )
        .unwrap();
        let q: BinaryMask = Image3::new(
            geom,
            (0..geom.len())
                .map(|_| (rng.uniform() < 0.4) as u8)
                .collect(),
        )
        .unwrap();
        let dc = dice_coefficient(&p, &q).map_err(|e| e.to_string())?;
        let dl = dice_loss_value(&mask_grid(&p), &mask_grid(&q), 0.0).map_err(|e| e.to_string())?;
        worst = worst.max((dc - (1.0 - dl)).abs());
        check(
            dc == dice_coefficient(&q, &p).unwrap(),
            "dice is not symmetric",
        )?;
    }
    check(
        worst <= 1e-6,
        format!("dice coefficient vs 1 - loss differs by {worst}"),
    )?;

    let geom = Geometry::new([1, 8, 8], [1.5; 3], [0.0; 3]).unwrap();
    let (mut a, mut b): (BinaryMask, BinaryMask) =
        (Image3::filled(geom, 0), Image3::filled(geom, 0));
    a.data[geom.index(0, 1, 1)] = 1;
    b.data[geom.index(0, 4, 5)] = 1;
    let d = com_distance(&a, &b).map_err(|e| e.to_string())?;
    check(d == Some(7.5), format!("offset COM distance {d:?}"))?;
    Ok(format!(
        "worked example 1/3 exact, complement gap {worst:.1e}, COM 7.5 mm"
    ))
}

fn cell(subject: &str, structure: &str, dice: f64, com: Option<f64>) -> ReportRow {
    ReportRow {
        subject_id: subject.into(),
        metrics: StructureMetrics {
            structure: structure.into(),
            dice,
            com_distance_mm: com,
        },
    }
}

pub fn fixture_report() -> EvalReport {
    EvalReport {
        structures: vec!["a".into(), "b".into()],
        rows: vec![
            cell("s1", "a", 0.8, Some(2.0)),
            cell("s1", "b", 0.9, Some(1.5)),
            cell("s2", "a", 0.6, Some(4.0)),
            cell("s2", "b", 0.5, Some(1.5)),
            cell("s3", "a", 0.7, None),
            cell("s3", "b", 0.1, Some(4.5)),
        ],
    }
}

/// `(structure, dice mean, dice std, com mean, com std)` worked by hand for
/// [`fixture_report`], population standard deviation.
pub fn fixture_expected() -> Vec<(&'static str, f64, f64, f64, f64)> {
    vec![
        ("a", 0.7, (0.02f64 / 3.0).sqrt(), 3.0, 1.0),
        ("b", 0.5, (0.32f64 / 3.0).sqrt(), 2.5, 2.0f64.sqrt()),
    ]
}

/// Mean and population std over the numeric cells of one CSV column,
/// parsed without the library.
fn column_stats(csv: &str, structure: &str, col: usize) -> (f64, f64) {
    let xs: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|f| f[0] != "mean" && f[0] != "std" && f[1] == structure && !f[col].is_empty())
        .map(|f| f[col].parse().unwrap())
        .collect();
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt(),
    )
}

fn aggregate_cell(csv: &str, kind: &str, structure: &str, col: usize) -> f64 {
    csv.lines()
        .map(|l| l.split(',').collect::<Vec<_>>())
        .find(|f| f[0] == kind && f[1] == structure)
        .map(|f| f[col].parse().unwrap())
        .unwrap()
}

pub fn aggregation_matches_recomputation() -> Result<String, String> {
    let tol = 1e-9;
    let r = fixture_report();
    let aggs = r.aggregates();
    let mut worst = 0.0f64;
    for ((name, dm, ds, cm, cs), a) in fixture_expected().into_iter().zip(&aggs) {
        check(
            a.structure == name,
            format!("aggregate order {}", a.structure),
        )?;
        for (got, want) in [
            (a.dice_mean, dm),
            (a.dice_std, ds),
            (a.com_mean.unwrap(), cm),
            (a.com_std.unwrap(), cs),
        ] {
            worst = worst.max((got - want).abs());
        }
    }
    worst = worst.max((r.mean_dice() - 0.6).abs());
    worst = worst.max((r.mean_com().unwrap() - 2.75).abs());

    let csv = r.to_csv();
    for s in ["a", "b"] {
        for col in [2, 3] {
            let (m, sd) = column_stats(&csv, s, col);
            worst = worst.max((aggregate_cell(&csv, "mean", s, col) - m).abs());
            worst = worst.max((aggregate_cell(&csv, "std", s, col) - sd).abs());
        }
    }
    worst = worst.max((aggregate_cell(&csv, "mean", "ALL", 2) - 0.6).abs());
    let back = EvalReport::from_csv(&csv).map_err(|e| e.to_string())?;
    check(back == r, "CSV rows do not round-trip")?;
    check(worst <= tol, format!("aggregate off by {worst:.2e}"))?;
    Ok(format!("max deviation {worst:.1e} over 2 structures"))
}
