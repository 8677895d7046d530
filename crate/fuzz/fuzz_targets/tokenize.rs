#![no_main]

use std::sync::LazyLock;

use ddx_core::records::{tokenize, PathologyCatalog, Vocabulary, BOS};
use libfuzzer_sys::fuzz_target;

static VOCAB: LazyLock<Vocabulary> = LazyLock::new(|| Vocabulary::from_catalog(&PathologyCatalog::builtin()));

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(t) = tokenize(text, &VOCAB, 128) {
        assert!(t.ids.len() <= 128);
        assert_eq!(t.ids[0], BOS);
        assert_eq!(t.ids.len(), t.tokens.len());
    }
});
