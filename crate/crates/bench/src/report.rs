use crate::experiment::ExperimentReport;

/// CSV with header `iteration,arm,mean_simple_regret,stderr`, one row per
/// iteration and arm. Values are raw; the JSON report also carries them in
/// units of `σ_y`.
pub fn report_csv(report: &ExperimentReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "arm", "mean_simple_regret", "stderr"])
        .expect("writing to memory");
    for (arm, summary) in [("private", &report.private), ("baseline", &report.baseline)] {
        for (t, (m, s)) in summary
            .mean_simple_regret
            .iter()
            .zip(&summary.stderr)
            .enumerate()
        {
            w.write_record([
                (t + 1).to_string(),
                arm.to_string(),
                m.to_string(),
                s.to_string(),
            ])
            .expect("writing to memory");
        }
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is utf-8")
}
