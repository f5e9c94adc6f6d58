#![no_main]

use libfuzzer_sys::fuzz_target;
use tvlars::diagnostics::{read_norms_jsonl, write_norms_jsonl};

fuzz_target!(|data: &[u8]| {
    if let Ok(recs) = read_norms_jsonl(data) {
        let mut buf = Vec::new();
        write_norms_jsonl(&mut buf, &recs).unwrap();
        assert_eq!(read_norms_jsonl(&buf[..]).unwrap(), recs);
    }
});
