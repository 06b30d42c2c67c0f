#![no_main]
use libfuzzer_sys::fuzz_target;

use maskseg::cli::gnuplot_columns;
use maskseg::metrics::EvalReport;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = EvalReport::from_csv(text) {
        let _ = report.to_csv();
    }
    let _ = gnuplot_columns(text);
});
