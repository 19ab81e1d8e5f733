use std::path::PathBuf;

use blendmas_core::membership::{Approval, IdentityPolicy, Role};
use blendmas_core::security::AuthorizationPolicy;
use blendmas_runtime::config::{load, NodeConfig, OracleConfig, ServicesConfig};

fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../config")
}

#[test]
fn shipped_policy_matches_builtin() {
    let p: AuthorizationPolicy = load(&config_dir().join("policy.json")).unwrap();
    assert_eq!(p, AuthorizationPolicy::default());
}

#[test]
fn shipped_identity_policy_matches_builtin() {
    let p: IdentityPolicy = load(&config_dir().join("identity-policy.json")).unwrap();
    for role in [Role::Miner, Role::Service, Role::Client] {
        assert_eq!(p.approval_for(role), IdentityPolicy::default().approval_for(role));
    }
    assert_eq!(p.approval_for(Role::Miner), Approval::Manual);
}

#[test]
fn example_process_configs_parse() {
    let o: OracleConfig = load(&config_dir().join("oracle.json")).unwrap();
    assert_eq!(o.port, 8540);
    let mut ports = Vec::new();
    for i in 0..4 {
        let n: NodeConfig = load(&config_dir().join(format!("node{i}.json"))).unwrap();
        assert_eq!(n.role, Role::Miner);
        ports.push((n.p2p_port, n.rpc_port));
    }
    ports.sort();
    ports.dedup();
    assert_eq!(ports.len(), 4);
    let s: ServicesConfig = load(&config_dir().join("services.json")).unwrap();
    assert_eq!(s.node_url, "http://127.0.0.1:8600");
}
