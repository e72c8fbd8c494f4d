#![no_main]

use libfuzzer_sys::fuzz_target;
use stc_core::tables::cache::decode_table;

fuzz_target!(|data: &[u8]| {
    // The decoder must reject malformed bytes without panicking or
    // overallocating; decoded tables must answer on-grid queries.
    if let Ok((_key, table)) = decode_table(data) {
        assert!(table.count() >= 2);
        table.query(0).expect("origin entry exists");
        table.query(table.count() - 1).expect("horizon entry exists");
        assert!(table.query(table.count()).is_err());
    }
});
