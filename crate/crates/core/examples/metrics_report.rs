//! Comparing a skill-guided curve against a GA baseline: speedup, lead
//! fraction and the report formats.

use morphoskill::metrics::{compare, render_report, FitnessCurve, ReportFormat, ReportRow};

fn main() {
    let budget = 100;
    let ga = FitnessCurve::new(vec![(1, 1.0), (40, 3.0), (80, 5.0)], budget).unwrap();
    let skills = FitnessCurve::new(vec![(1, 2.0), (40, 5.0), (90, 6.0)], budget).unwrap();
    let slow = FitnessCurve::new(vec![(1, 0.5), (70, 4.0)], budget).unwrap();
    println!("curve.csv:\n{}", skills.to_csv());

    let rows: Vec<ReportRow> = vec![
        compare("Walker", &skills, &ga).unwrap().into(),
        compare("Carrier", &slow, &ga).unwrap().into(),
        ReportRow::Single { task: "Pusher".into(), endpoint: 7.25 },
    ];
    println!("{}", render_report(&rows, ReportFormat::Table));
    println!("{}", render_report(&rows, ReportFormat::Csv));
}
