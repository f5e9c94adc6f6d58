#![no_main]

use libfuzzer_sys::fuzz_target;
use tvlars::harness::{parse_metrics_csv, write_metrics_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(rows) = parse_metrics_csv(data) {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let again = parse_metrics_csv(&buf).expect("written metrics parse");
        assert_eq!(again.len(), rows.len());
    }
});
