use foampilot::mcp::RpcMessage;
use proptest::prelude::*;

mod support;
use support::rpc_gen::envelope;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn encode_then_decode_is_identity(msg in envelope()) {
        let line = msg.encode();
        prop_assert!(!line.contains('\n'));
        let back = RpcMessage::decode(&line).map_err(|e| TestCaseError::fail(format!("{e}\n{line}")))?;
        prop_assert_eq!(&back, &msg);
        prop_assert_eq!(back.encode(), line);
    }
}
