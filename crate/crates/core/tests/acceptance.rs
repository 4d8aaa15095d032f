//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uu_audit::characterize::{characterize_uu, fit_ols, TargetMode};
use uu_audit::evalcv::{balanced_accuracy, FoldPlan, Split};
use uu_audit::eventlog::{parse_timestamp, Action, ClickEvent, CourseSchedule, PassRule, WeekPlan};
use uu_audit::features::{extract_features, indicator_index, Demographics, FeatureRow, N_INDICATORS};
use uu_audit::grouping::{assign_group, Group, GroupAssignment, TrustLevel};
use uu_audit::models::{confidence, predicted_label, Prediction};
use uu_audit::pipeline::{run_audit, test_assignments, Audit, AuditConfig, GridSize, ModelChoice};
use uu_audit::synth::{generate_course, SynthConfig, SyntheticCourse};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn audit(course: &SyntheticCourse, model: ModelChoice, seed: u64) -> Audit {
    let cfg = AuditConfig {
        model,
        grid: GridSize::Compact,
        seed,
        ..AuditConfig::default()
    };
    run_audit(&course.events, &course.schedule, &course.outcomes, &course.demographics, &cfg)
        .expect("audit runs")
}

fn test_fraction(audit: &Audit, group: Group) -> f64 {
    audit.prevalence.fraction(Split::Test, group)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

// ---------------------------------------------------------------- P1

/// Group by lookup on (label, predicted label, confident).
fn group_table(y: u8, y_hat: u8, confident: bool) -> Group {
    const TABLE: [[[Group; 2]; 2]; 2] = [
        [
            [Group::KnownUnknown, Group::KnownKnown],
            [Group::KnownUnknown, Group::UnknownUnknown],
        ],
        [
            [Group::KnownUnknown, Group::UnknownUnknown],
            [Group::KnownUnknown, Group::KnownKnown],
        ],
    ];
    TABLE[y as usize][y_hat as usize][usize::from(confident)]
}

fn p1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fixed = TrustLevel::new(0.25).unwrap();
    for i in 0..10_000 {
        let y: u8 = rng.random_range(0..=1);
        let p: f64 = if i % 50 == 0 {
            [0.0, 0.25, 0.5, 0.75, 1.0][i / 50 % 5]
        } else {
            rng.random()
        };
        let delta = TrustLevel::new(rng.random_range(1e-9..0.5)).unwrap();
        let (y_hat, c) = (predicted_label(p), confidence(p));
        let predicates = [
            c >= delta.value() && y_hat == y,
            c < delta.value(),
            c >= delta.value() && y_hat != y,
        ];
        check(predicates.iter().filter(|b| **b).count() == 1, format!("predicates not exclusive at y={y} p={p}"))?;
        let g = assign_group(y, y_hat, c, delta);
        check(predicates[g.code() as usize], format!("group {g:?} contradicts predicates at y={y} p={p}"))?;
        let oracle = group_table(y, y_hat, (p - 0.5).abs() >= 0.25);
        check(assign_group(y, y_hat, c, fixed) == oracle, format!("table mismatch at y={y} p={p}"))?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!("10000 triples, exclusive and table-exact, {elapsed:.2?}"))
}

// ---------------------------------------------------------------- P2

fn p2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut ps: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
    ps.extend([0.5, 0.0, 1.0, 0.5 - f64::EPSILON / 4.0, 0.5 + f64::EPSILON / 2.0]);
    for p in ps {
        let pred = Prediction::new("u", p, 0, "m");
        check(pred.c == (p - 0.5).abs(), format!("c wrong at p={p}"))?;
        let expected: u8 = if p >= 0.5 { 1 } else { 0 };
        check(pred.y_hat == expected, format!("y_hat wrong at p={p}"))?;
    }
    check(predicted_label(0.5) == 1 && confidence(0.5) == 0.0, "p = 0.5 boundary")?;
    Ok("1005 probabilities incl. p = 0.5 exact".into())
}

// ---------------------------------------------------------------- P3

/// Solves A x = b by Gauss-Jordan elimination with partial pivoting; also returns A⁻¹.
fn gauss_jordan(a: &[Vec<f64>], b: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a[i].clone();
            row.push(b[i]);
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, pivot);
        let d = m[col][col];
        for v in &mut m[col] {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..m[r].len() {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    let x = m.iter().map(|row| row[n]).collect();
    let inv = m.iter().map(|row| row[n + 1..].to_vec()).collect();
    (x, inv)
}

struct OracleFit {
    beta: Vec<f64>,
    r2: f64,
    t: Vec<f64>,
}

fn normal_equations(rows: &[Vec<f64>], y: &[f64]) -> OracleFit {
    let n = rows.len();
    let design: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| std::iter::once(1.0).chain(r.iter().copied()).collect())
        .collect();
    let k = design[0].len();
    let xtx: Vec<Vec<f64>> = (0..k)
        .map(|a| (0..k).map(|b| (0..n).map(|i| design[i][a] * design[i][b]).sum()).collect())
        .collect();
    let xty: Vec<f64> = (0..k).map(|a| (0..n).map(|i| design[i][a] * y[i]).sum()).collect();
    let (beta, inv) = gauss_jordan(&xtx, &xty);
    let resid: Vec<f64> = (0..n)
        .map(|i| y[i] - (0..k).map(|j| design[i][j] * beta[j]).sum::<f64>())
        .collect();
    let ssr: f64 = resid.iter().map(|e| e * e).sum();
    let mean = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let sigma2 = ssr / (n - k) as f64;
    let t = (0..k).map(|j| beta[j] / (sigma2 * inv[j][j]).sqrt()).collect();
    OracleFit {
        beta,
        r2: 1.0 - ssr / sst,
        t,
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn p3() -> Outcome {
    const TOL: f64 = 1e-8;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for design in 0..100 {
        let k = rng.random_range(1..=46);
        let n = rng.random_range(k + 3..=200);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let truth: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| 0.7 + r.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-1.0..1.0))
            .collect();
        let names: Vec<String> = (0..k).map(|j| format!("x{j}")).collect();
        let fit = fit_ols(&rows, &y, &names).map_err(|e| format!("design {design}: {e}"))?;
        let oracle = normal_equations(&rows, &y);
        let ours_beta: Vec<f64> = std::iter::once(fit.intercept.gamma)
            .chain(fit.coefficients.iter().map(|c| c.gamma))
            .collect();
        let ours_t: Vec<f64> = std::iter::once(fit.intercept.t.unwrap())
            .chain(fit.coefficients.iter().map(|c| c.t.unwrap()))
            .collect();
        let gaps = ours_beta
            .iter()
            .zip(&oracle.beta)
            .chain(ours_t.iter().zip(&oracle.t))
            .map(|(a, b)| relative_gap(*a, *b))
            .chain(std::iter::once(relative_gap(fit.r2, oracle.r2)));
        for gap in gaps {
            worst = worst.max(gap);
        }
        check(worst <= TOL, format!("design {design} (n={n}, k={k}): relative gap {worst:e}"))?;
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!("100 designs, worst relative gap {worst:.1e} (tol 1e-8), {elapsed:.2?}"))
}

// ---------------------------------------------------------------- P4

fn p4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..1000 {
        let n = rng.random_range(2..200);
        let mut y: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        y[0] = 0;
        y[1] = 1;
        let y_hat: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        let (mut tp, mut fn_, mut tn, mut fp) = (0u32, 0u32, 0u32, 0u32);
        for (t, p) in y.iter().zip(&y_hat) {
            match (t, p) {
                (1, 1) => tp += 1,
                (1, _) => fn_ += 1,
                (_, 0) => tn += 1,
                _ => fp += 1,
            }
        }
        let oracle = (f64::from(tp) / f64::from(tp + fn_) + f64::from(tn) / f64::from(tn + fp)) / 2.0;
        let ours = balanced_accuracy(&y, &y_hat).map_err(|e| e.to_string())?;
        check(ours == oracle, format!("case {case}: {ours} vs {oracle}"))?;
    }
    let y: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
    for constant in [0u8, 1] {
        let ba = balanced_accuracy(&y, &[constant; 100]).unwrap();
        check(ba == 0.5, format!("constant {constant} gives {ba}"))?;
    }
    Ok("1000 label vectors exact; constant predictor = 0.5".into())
}

// ---------------------------------------------------------------- P5

fn p5(course: &SyntheticCourse, forest: &Audit) -> Outcome {
    let y: Vec<u8> = course.outcomes.iter().map(|o| o.y).collect();
    let plan = FoldPlan::new(&y, 10, forest.report().seed).map_err(|e| e.to_string())?;
    let n = y.len();
    for (f, test) in plan.outer.iter().enumerate() {
        let test_set: BTreeSet<usize> = test.iter().copied().collect();
        let train = plan.outer_train(f);
        check(train.iter().all(|i| !test_set.contains(i)), format!("outer fold {f} leaks"))?;
        check(train.len() + test.len() == n, format!("outer fold {f} loses students"))?;
        for (g, inner) in plan.inner[f].iter().enumerate() {
            check(inner.iter().all(|i| !test_set.contains(i)), format!("inner fold {f}/{g} sees outer test"))?;
        }
    }
    // the same leakage check on the recorded predictions
    let mut seen: BTreeMap<(usize, &str), BTreeSet<Split>> = BTreeMap::new();
    for sp in &forest.cv.by_split {
        seen.entry((sp.prediction.fold_id, sp.prediction.user_id.as_str()))
            .or_default()
            .insert(sp.split);
    }
    check(
        seen.values().all(|s| !(s.contains(&Split::Test) && (s.contains(&Split::Train) || s.contains(&Split::Validation)))),
        "a student is both test and train within one outer fold",
    )?;
    let oof: Vec<&str> = forest.out_of_fold().iter().map(|p| p.user_id.as_str()).collect();
    let unique: BTreeSet<&str> = oof.iter().copied().collect();
    let roster: BTreeSet<&str> = course.outcomes.iter().map(|o| o.user_id.as_str()).collect();
    check(oof.len() == n && unique == roster, "out-of-fold predictions are not a bijection")?;
    let deviation = plan.max_fail_deviation(&y);
    check(deviation <= 1.0, format!("fail-count deviation {deviation}"))?;
    Ok(format!("{n} students, disjoint splits, bijective OOF, max fail deviation {deviation:.2} students"))
}

// ---------------------------------------------------------------- P6

fn p6() -> Outcome {
    let start = Instant::now();
    let mut control = Vec::new();
    let mut confounded = Vec::new();
    let mut wins = 0;
    for seed in 0..10 {
        let base = generate_course(&SynthConfig::flipped(seed)).map_err(|e| e.to_string())?;
        let treated = generate_course(&SynthConfig::flipped(seed).with_confounding(0.2)).map_err(|e| e.to_string())?;
        let uu0 = test_fraction(&audit(&base, ModelChoice::Forest, seed), Group::UnknownUnknown);
        let uu1 = test_fraction(&audit(&treated, ModelChoice::Forest, seed), Group::UnknownUnknown);
        wins += usize::from(uu1 > uu0);
        control.push(uu0);
        confounded.push(uu1);
    }
    let (m0, m1) = (median(control.clone()), median(confounded.clone()));
    let elapsed = start.elapsed();
    let summary = format!(
        "confounded > control on {wins}/10 seeds, median UU {m1:.3} vs {m0:.3} ({:.1}x), {elapsed:.0?}",
        m1 / m0
    );
    check(wins >= 9, format!("{summary}; need >= 9/10"))?;
    check(m1 >= 2.0 * m0, format!("{summary}; need median ratio >= 2"))?;
    check(elapsed < Duration::from_secs(300), format!("{summary}; over 5 min"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- P7

fn mean_test_confidence(audit: &Audit) -> f64 {
    let oof = audit.out_of_fold();
    oof.iter().map(|p| p.c).sum::<f64>() / oof.len() as f64
}

fn p7(forest: &Audit, baseline: &Audit) -> Outcome {
    let (cf, cb) = (mean_test_confidence(forest), mean_test_confidence(baseline));
    let f = (test_fraction(forest, Group::KnownUnknown), test_fraction(forest, Group::UnknownUnknown));
    let b = (test_fraction(baseline, Group::KnownUnknown), test_fraction(baseline, Group::UnknownUnknown));
    let summary = format!(
        "mean c {cb:.3} (overconfident) vs {cf:.3} (forest); KU/UU overconfident {:.3}/{:.3}, forest {:.3}/{:.3}",
        b.0, b.1, f.0, f.1
    );
    check(cb > cf, format!("{summary}; baseline not more confident"))?;
    check(b.1 > b.0, format!("{summary}; baseline UU <= KU"))?;
    check(f.0 > f.1, format!("{summary}; forest KU <= UU"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- P8

fn planted_fixture(seed: u64) -> (Vec<FeatureRow>, Vec<GroupAssignment>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f30 = indicator_index("F30").unwrap();
    let n = 300;
    let mut rows = Vec::with_capacity(n);
    let mut assignments = Vec::with_capacity(n);
    for i in 0..n {
        let v: Vec<f64> = (0..N_INDICATORS).map(|_| rng.random()).collect();
        let uu = v[f30] + rng.random_range(-0.25..0.25) > 0.75;
        let group = match (uu, rng.random_bool(0.4)) {
            (true, _) => Group::UnknownUnknown,
            (false, true) => Group::KnownUnknown,
            (false, false) => Group::KnownKnown,
        };
        let user_id = format!("u{i:03}");
        rows.push(FeatureRow {
            user_id: user_id.clone(),
            v,
            demographics: None,
        });
        assignments.push(GroupAssignment {
            user_id,
            group,
            delta: 0.25,
            y: 0,
            p: 0.0,
            c: 0.5,
            direction: None,
        });
    }
    // demographics drawn from a course roster, then shuffled across students
    let mut demo: Vec<Demographics> = (0..n)
        .map(|i| Demographics {
            gender: ["f", "m"][i % 2].into(),
            provenience: ["abroad", "local", "regional"][i % 3].into(),
        })
        .collect();
    use rand::seq::SliceRandom;
    demo.shuffle(&mut rng);
    for (row, d) in rows.iter_mut().zip(demo) {
        row.demographics = Some(d);
    }
    (rows, assignments)
}

fn p8() -> Outcome {
    let mut recovered = 0;
    let mut demo_clean = 0;
    for seed in 0..10 {
        let (rows, assignments) = planted_fixture(seed);
        let ch = characterize_uu(&rows, &assignments, TargetMode::Binary).map_err(|e| e.to_string())?;
        let top = ch
            .fit
            .coefficients
            .iter()
            .max_by(|a, b| a.t.unwrap_or(0.0).abs().total_cmp(&b.t.unwrap_or(0.0).abs()))
            .unwrap();
        recovered += usize::from(top.id == "F30" && top.p.is_some_and(|p| p < 0.01));
        let demographic: Vec<_> = ch.fit.coefficients.iter().filter(|c| c.id.contains('=')).collect();
        check(demographic.len() == 3, "expected three demographic columns")?;
        demo_clean += usize::from(demographic.iter().all(|c| c.p.is_some_and(|p| p > 0.05)));
    }
    let summary = format!("planted indicator top in {recovered}/10 seeds; demographics non-significant in {demo_clean}/10");
    check(recovered >= 8, format!("{summary}; need >= 8/10"))?;
    check(demo_clean >= 9, format!("{summary}; need >= 9/10"))?;
    Ok(summary)
}

// ---------------------------------------------------------------- P9

fn ev(user: &str, action: Action, object: &str, at: &str) -> ClickEvent {
    ClickEvent {
        user_id: user.into(),
        action,
        object_id: object.into(),
        timestamp: parse_timestamp(at).unwrap(),
    }
}

fn p9_fixture() -> (Vec<ClickEvent>, CourseSchedule) {
    use Action::*;
    let schedule = CourseSchedule {
        course_id: "fixture".into(),
        start: parse_timestamp("2024-09-02T00:00:00Z").unwrap(),
        weeks: vec![
            WeekPlan {
                videos: vec!["v1a".into(), "v1b".into()],
                quizzes: vec!["q1".into()],
            },
            WeekPlan {
                videos: vec!["v2a".into()],
                quizzes: vec!["q2".into()],
            },
        ],
        pass_rule: PassRule::FLIPPED,
    };
    let events = vec![
        ev("a", VideoLoad, "v1a", "2024-09-02T10:00:00Z"),
        ev("a", VideoPlay, "v1a", "2024-09-02T10:00:10Z"),
        ev("a", VideoPause, "v1a", "2024-09-02T10:02:00Z"),
        ev("a", VideoPlay, "v1a", "2024-09-02T10:03:00Z"),
        ev("a", VideoSeekBackward, "v1a", "2024-09-02T10:05:00Z"),
        ev("a", VideoStop, "v1a", "2024-09-02T10:06:00Z"),
        ev("a", VideoPlay, "v2a", "2024-09-02T10:07:00Z"),
        ev("a", ProblemCheck, "q1", "2024-09-02T10:08:00Z"),
        ev("a", ProblemCheck, "q2", "2024-09-02T10:09:00Z"),
        ev("a", ProblemCheck, "q1", "2024-09-02T10:10:00Z"),
        ev("a", VideoPlay, "v2a", "2024-09-09T09:00:00Z"),
        ev("a", VideoSpeedChange, "v2a", "2024-09-09T09:01:00Z"),
        ev("a", VideoPlay, "v1b", "2024-09-09T09:05:00Z"),
        ev("a", ProblemCheck, "q2", "2024-09-09T09:20:00Z"),
        ev("b", VideoLoad, "v1b", "2024-09-04T18:00:00Z"),
        ev("b", VideoPlay, "v1b", "2024-09-04T18:00:05Z"),
        ev("b", VideoSeekForward, "v1b", "2024-09-04T18:03:00Z"),
        ev("b", VideoPlay, "v1a", "2024-09-04T18:10:00Z"),
        ev("b", ProblemCheck, "q1", "2024-09-04T18:30:00Z"),
        ev("c", ProblemCheck, "q2", "2024-09-10T12:00:00Z"),
        ev("c", ProblemCheck, "q2", "2024-09-10T12:02:00Z"),
        ev("c", VideoLoad, "v2a", "2024-09-10T12:05:00Z"),
    ];
    (events, schedule)
}

fn p9() -> Outcome {
    let (events, schedule) = p9_fixture();
    let set = extract_features(&events, &schedule, &[], &BTreeMap::new(), 1800);
    check(set.diagnostics.is_clean(), "fixture produced diagnostics")?;
    // hand-computed weekly values, averaged over the two weeks
    let expected: [(&str, [f64; 3]); 13] = [
        ("F02", [(1.0 / 2.0 + 1.0) / 2.0, (1.0 + 0.0) / 2.0, (0.0 + 0.0) / 2.0]),
        ("F10", [(3.0 / 7.0 + 2.0 / 3.0) / 2.0, (2.0 / 4.0 + 0.0) / 2.0, 0.0]),
        ("F11", [(1.0 / 7.0 + 0.0) / 2.0, 0.0, 0.0]),
        ("F12", [(1.0 / 7.0 + 0.0) / 2.0, 0.0, 0.0]),
        ("F13", [(1.0 / 7.0 + 0.0) / 2.0, 0.0, 0.0]),
        ("F14", [0.0, (1.0 / 4.0 + 0.0) / 2.0, 0.0]),
        ("F15", [(0.0 + 1.0 / 3.0) / 2.0, 0.0, 0.0]),
        ("F29", [(3.0 + 1.0) / 2.0, (1.0 + 0.0) / 2.0, (0.0 + 2.0) / 2.0]),
        ("F30", [(7.0 + 3.0) / 2.0, (4.0 + 0.0) / 2.0, (0.0 + 1.0) / 2.0]),
        ("F36", [(1.0 + 1.0) / 2.0, (1.0 + 0.0) / 2.0, (0.0 + 1.0) / 2.0]),
        ("F37", [(1.0 + 0.0) / 2.0, 0.0, 0.0]),
        ("F38", [(1.0 + 1.0) / 2.0, (2.0 + 0.0) / 2.0, 0.0]),
        ("F39", [(1.0 + 0.0) / 2.0, 0.0, 0.0]),
    ];
    let ids: Vec<&str> = set.students.iter().map(|s| s.user_id.as_str()).collect();
    check(ids == ["a", "b", "c"], format!("unexpected roster {ids:?}"))?;
    for (id, values) in expected {
        let j = indicator_index(id).unwrap();
        for (student, want) in set.students.iter().zip(values) {
            let got = student.averaged[j];
            check(got == want, format!("{id} for {}: {got} vs hand value {want}", student.user_id))?;
        }
    }
    let f30 = indicator_index("F30").unwrap();
    let normalized: Vec<f64> = set.students.iter().map(|s| s.v[f30]).collect();
    check(normalized == [1.0, (2.0 - 0.5) / (5.0 - 0.5), 0.0], format!("F30 normalized {normalized:?}"))?;

    let mut checked = 0;
    for cfg in [SynthConfig::flipped(9).with_confounding(0.2), SynthConfig::mooc(9)] {
        let course = generate_course(&cfg).map_err(|e| e.to_string())?;
        let fails = course.outcomes.iter().filter(|o| o.y == 1).count() as f64 / cfg.n_students as f64;
        check(
            (fails - cfg.fail_rate).abs() <= 0.05,
            format!("{}: failing rate {fails:.3} vs target {}", cfg.course_id, cfg.fail_rate),
        )?;
        let features = extract_features(&course.events, &course.schedule, &[], &course.demographics, 1800);
        check(features.diagnostics.is_clean(), format!("{}: diagnostics", cfg.course_id))?;
        for s in &features.students {
            check(s.v.iter().all(|v| (0.0..=1.0).contains(v)), format!("{}: value outside [0, 1]", s.user_id))?;
            checked += s.v.len();
        }
    }
    Ok(format!("13 indicators exact on 3x2 fixture; {checked} normalized values in [0, 1]; preset fail rates on target"))
}

// ---------------------------------------------------------------- P10

fn artifact_bytes(seed: u64) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let course = generate_course(&SynthConfig::flipped(seed).with_confounding(0.2)).map_err(|e| e.to_string())?;
    course.write_to_dir(dir.path()).map_err(|e| e.to_string())?;
    let audit = audit(&course, ModelChoice::Forest, seed);
    audit.write_artifacts(dir.path(), TargetMode::Binary).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir.path()).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let bytes = std::fs::read(entry.path()).map_err(|e| e.to_string())?;
        out.insert(entry.file_name().to_string_lossy().into_owned(), bytes);
    }
    Ok(out)
}

fn p10() -> Outcome {
    let a = artifact_bytes(21)?;
    let b = artifact_bytes(21)?;
    check(a.keys().eq(b.keys()), "different artifact sets")?;
    for (name, bytes) in &a {
        check(b[name] == *bytes, format!("{name} differs between runs"))?;
    }
    check(a.contains_key("characterization.json"), "characterization missing")?;
    Ok(format!("{} artifacts byte-identical across two runs", a.len()))
}

fn main() {
    let start = Instant::now();
    let course = generate_course(&SynthConfig::flipped(7)).expect("preset generates");
    let forest = audit(&course, ModelChoice::Forest, 7);
    let baseline = audit(&course, ModelChoice::Overconfident, 7);
    let _ = test_assignments(&forest.assignments);

    let results: Vec<(&str, &str, Outcome)> = vec![
        ("P1", "grouping conformance", p1()),
        ("P2", "confidence and label formulas", p2()),
        ("P3", "OLS oracle equivalence", p3()),
        ("P4", "balanced accuracy", p4()),
        ("P5", "CV hygiene", p5(&course, &forest)),
        ("P6", "confounder experiment", p6()),
        ("P7", "overconfidence contrast", p7(&forest, &baseline)),
        ("P8", "characterization recovery", p8()),
        ("P9", "feature formulas and presets", p9()),
        ("P10", "determinism", p10()),
    ];
    let mut failed = 0;
    for (id, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("{id:<4} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{id:<4} FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {}/{} passed in {:.1?}", results.len() - failed, results.len(), start.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
