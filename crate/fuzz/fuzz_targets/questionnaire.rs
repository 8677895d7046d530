#![no_main]

use std::sync::LazyLock;

use ddx_core::records::PathologyCatalog;
use ddx_server::{render_answers, validate_and_normalize, Submission};
use libfuzzer_sys::fuzz_target;

static CATALOG: LazyLock<PathologyCatalog> = LazyLock::new(PathologyCatalog::builtin);

fuzz_target!(|data: &[u8]| {
    let Ok(submission) = serde_json::from_slice::<Submission>(data) else { return };
    if let Ok(answers) = validate_and_normalize(&submission.answers, &CATALOG) {
        assert_eq!(validate_and_normalize(&render_answers(&answers), &CATALOG), Ok(answers));
    }
});
