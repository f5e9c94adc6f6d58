#![no_main]

use libfuzzer_sys::fuzz_target;
use tvlars::data::{parse_cifar10_bin, write_cifar10_bin, Cifar10Reader, CIFAR10_RECORD_LEN};

fuzz_target!(|data: &[u8]| {
    let streamed: Vec<_> = Cifar10Reader::new(data).collect();
    match parse_cifar10_bin(data) {
        Ok(recs) => {
            assert_eq!(data.len() % CIFAR10_RECORD_LEN, 0);
            assert_eq!(write_cifar10_bin(&recs), data);
            assert!(streamed.iter().all(Result::is_ok));
        }
        Err(_) => {
            // the streaming reader must also stop on an error
            assert!(streamed.last().is_some_and(Result::is_err));
        }
    }
});
