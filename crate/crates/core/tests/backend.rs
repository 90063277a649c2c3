use sciextract::backend::{request_hash, CompletionRequest, DEFAULT_MODEL};

// Digests computed with Python's hashlib over the compact JSON array.
#[test]
fn request_hash_is_pinned() {
    assert_eq!(
        request_hash("Extract μm values", DEFAULT_MODEL, 0.0, 4096),
        "bd16e58b72108d0074a9f29d7d6d4fa7c8de3b4155d12819fc6a70247219fb10"
    );
    assert_eq!(
        CompletionRequest::new("a \"b\"\n", "m", 0.7, 100).unwrap().request_hash,
        "6dfd639c822858e569dc754b0c43caa24eec8d8d4ba06a0aeed8cd1067c21be8"
    );
}
