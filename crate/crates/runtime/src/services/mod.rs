//! The security microservices and the data provider they protect.
//!
//! Each service is a plain struct. A dependency is reached through a
//! [`Link`]: in-process in mono mode, over HTTP in micro mode.

pub mod access;
pub mod data;
pub mod hidx;
pub mod identity;
pub mod management;
pub mod registration;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use anyhow::{Context, Result};
use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json, Router};
use blendmas_core::bench::Mode;
use blendmas_core::crypto::{Account, Address};
use blendmas_core::membership::{LocalRoster, Role, StaticNodesFile};
use blendmas_core::security::{AuthorizationPolicy, Throttle};
use serde::{Deserialize, Serialize};
use tokio::task::JoinHandle;
use tracing::{info, warn};

use crate::chain_client::ChainClient;
use crate::config::{ServiceKind, ServicesConfig};
use crate::http::{self, ok, ApiError, ApiResult};
use crate::oracle::OracleClient;
use crate::util::{http_client, load_or_create_account, read_json};

pub use access::AccessControl;
pub use data::DataProvider;
pub use hidx::HashedIndex;
pub use identity::Identity;
pub use management::Management;
pub use registration::Registration;

/// Process-wide state shared by the services hosted in one process.
pub struct Shared {
    pub roster: RwLock<LocalRoster>,
    throttle: RwLock<Option<Throttle>>,
    pub chain: ChainClient,
    pub oracle: OracleClient,
    pub http: reqwest::Client,
    pub policy: AuthorizationPolicy,
    pub chain_timeout: Duration,
    pub data_dir: std::path::PathBuf,
    pub host: String,
}

impl Shared {
    pub fn throttle(&self) -> Option<Throttle> {
        *self.throttle.read().expect("lock")
    }

    pub fn set_throttle(&self, t: Option<Throttle>) {
        *self.throttle.write().expect("lock") = t;
    }

    pub fn is_enrolled(&self, address: &Address) -> bool {
        self.roster.read().expect("lock").is_enrolled(address)
    }

    pub fn is_banned(&self, address: &Address) -> bool {
        self.roster
            .read()
            .expect("lock")
            .current()
            .is_some_and(|f| f.is_banned(address))
    }

    pub fn install_roster(&self, file: StaticNodesFile) -> bool {
        self.roster.write().expect("lock").install(file).is_ok()
    }
}

/// Route to a dependency: the same process or a base URL.
pub enum Link<T> {
    Local(Arc<T>),
    Remote { base: String, http: reqwest::Client },
}

impl<T> Clone for Link<T> {
    fn clone(&self) -> Self {
        match self {
            Link::Local(s) => Link::Local(s.clone()),
            Link::Remote { base, http } => Link::Remote {
                base: base.clone(),
                http: http.clone(),
            },
        }
    }
}

impl<T> Link<T> {
    pub fn remote(base: impl Into<String>) -> Self {
        Link::Remote {
            base: base.into(),
            http: http_client(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThrottleBody {
    pub fraction: Option<f64>,
}

/// Common readiness bookkeeping.
#[derive(Debug, Default)]
pub struct Readiness(AtomicBool);

impl Readiness {
    pub fn set(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn get(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }

    pub fn require(&self) -> Result<(), ApiError> {
        if self.get() {
            Ok(())
        } else {
            Err(ApiError::unavailable("service is starting"))
        }
    }
}

/// The services hosted by one process, used by the shared admin routes.
#[derive(Clone, Default)]
pub struct Hosted {
    pub registration: Option<Arc<Registration>>,
    pub identity: Option<Arc<Identity>>,
    pub management: Option<Arc<Management>>,
    pub access: Option<Arc<AccessControl>>,
    pub hidx: Option<Arc<HashedIndex>>,
    pub data: Option<Arc<DataProvider>>,
}

#[derive(Clone)]
struct CommonState {
    kind: ServiceKind,
    address: Address,
    shared: Arc<Shared>,
    hosted: Hosted,
}

impl CommonState {
    fn ready(&self) -> bool {
        let h = &self.hosted;
        match self.kind {
            ServiceKind::Registration => h.registration.as_ref().is_some_and(|s| s.ready.get()),
            ServiceKind::Identity => h.identity.as_ref().is_some_and(|s| s.ready.get()),
            ServiceKind::Management => h.management.as_ref().is_some_and(|s| s.ready.get()),
            ServiceKind::AccessControl => h.access.as_ref().is_some_and(|s| s.ready.get()),
            ServiceKind::HashedIndex => h.hidx.as_ref().is_some_and(|s| s.ready.get()),
            ServiceKind::Data => h.data.as_ref().is_some_and(|s| s.ready.get()),
        }
    }
}

fn common_routes(state: CommonState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/admin/roster", post(roster_push))
        .route("/admin/throttle", post(set_throttle))
        .with_state(state)
}

async fn health(State(s): State<CommonState>) -> ApiResult {
    ok(serde_json::json!({
        "service": s.kind.as_str(),
        "address": s.address,
        "ready": s.ready(),
        "roster_epoch": s.shared.roster.read().expect("lock").epoch(),
    }))
}

async fn roster_push(State(s): State<CommonState>, Json(file): Json<StaticNodesFile>) -> ApiResult {
    let oracle_key = *s.shared.roster.read().expect("lock").oracle_key();
    if !file.verify(&oracle_key) {
        return Err(ApiError::forbidden("roster signature does not verify"));
    }
    // Stale rosters are acknowledged and ignored.
    if s.shared.install_roster(file.clone()) {
        if let Some(reg) = &s.hosted.registration {
            reg.apply_roster(&file);
        }
    }
    http::ok_empty()
}

async fn set_throttle(State(s): State<CommonState>, Json(body): Json<ThrottleBody>) -> ApiResult {
    let t = match body.fraction {
        Some(f) => Some(Throttle::new(f).ok_or_else(|| ApiError::bad_request("fraction must be in (0, 1]"))?),
        None => None,
    };
    s.shared.set_throttle(t);
    http::ok_empty()
}

/// Enrolls `account` as a service listening on `port` and installs the current roster.
pub async fn enroll_service(shared: &Shared, account: &Account, port: u16) -> Result<()> {
    loop {
        let roster = match shared.oracle.roster().await {
            Ok(r) => r,
            Err(e) => {
                warn!("oracle unavailable: {e}");
                tokio::time::sleep(Duration::from_millis(200)).await;
                continue;
            }
        };
        if roster.is_enrolled(&account.address()) {
            shared.install_roster(roster);
            return Ok(());
        }
        match shared.oracle.join(account, &shared.host, port, Role::Service).await {
            Ok(_) => {}
            Err(e) if e.status == axum::http::StatusCode::CONFLICT => {}
            Err(e) => {
                warn!("service join failed: {e}");
                tokio::time::sleep(Duration::from_millis(200)).await;
            }
        }
    }
}

/// Retries `f` until it succeeds, logging failures.
pub async fn retry<T, F, Fut>(what: &str, mut f: F) -> T
where
    F: FnMut() -> Fut,
    Fut: std::future::Future<Output = Result<T, ApiError>>,
{
    let mut delay = Duration::from_millis(50);
    loop {
        match f().await {
            Ok(v) => return v,
            Err(e) => {
                tracing::debug!("{what}: {e}");
                tokio::time::sleep(delay).await;
                delay = (delay * 2).min(Duration::from_millis(500));
            }
        }
    }
}

pub struct ServicesHandle {
    pub urls: BTreeMap<ServiceKind, String>,
    pub addresses: BTreeMap<ServiceKind, Address>,
    pub hosted: Hosted,
    tasks: Vec<JoinHandle<()>>,
}

impl ServicesHandle {
    pub fn url(&self, kind: ServiceKind) -> &str {
        &self.urls[&kind]
    }

    pub fn shutdown(&mut self) {
        for t in self.tasks.drain(..) {
            t.abort();
        }
    }
}

impl Drop for ServicesHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn build_shared(config: &ServicesConfig, oracle_key: blendmas_core::PublicKey) -> Result<Arc<Shared>> {
    let policy = match &config.policy {
        Some(path) => read_json(path).context("loading authorization policy")?,
        None => AuthorizationPolicy::default(),
    };
    let throttle = config.cpu_throttle.and_then(Throttle::new);
    Ok(Arc::new(Shared {
        roster: RwLock::new(LocalRoster::new(oracle_key)),
        throttle: RwLock::new(throttle),
        chain: ChainClient::new(config.node_url.clone()),
        oracle: OracleClient::new(config.oracle_url.clone()),
        http: http_client(),
        policy,
        chain_timeout: Duration::from_millis(config.chain_timeout_ms),
        data_dir: config.data_dir.clone(),
        host: config.host.clone(),
    }))
}


/// Starts the services of `config` in this process. `only` selects a single
/// service (micro mode, one process per service); `None` hosts all six.
pub async fn start_services(config: ServicesConfig, only: Option<ServiceKind>) -> Result<ServicesHandle> {
    std::fs::create_dir_all(&config.data_dir)?;
    let kinds: Vec<ServiceKind> = match only {
        Some(k) => vec![k],
        None => ServiceKind::ALL.to_vec(),
    };
    let mono = config.mode == Mode::Mono;
    if mono && only.is_some() {
        anyhow::bail!("mono mode hosts every service in one process");
    }

    let oracle = OracleClient::new(config.oracle_url.clone());
    let key = retry("fetching genesis", || oracle.genesis()).await.oracle_public_key;

    // In micro mode every hosted service gets its own context, as if it ran alone.
    let mono_shared = if mono { Some(build_shared(&config, key)?) } else { None };
    let mut contexts: BTreeMap<ServiceKind, Arc<Shared>> = BTreeMap::new();
    for k in &kinds {
        let s = match &mono_shared {
            Some(s) => s.clone(),
            None => build_shared(&config, key)?,
        };
        contexts.insert(*k, s);
    }

    let accounts: BTreeMap<ServiceKind, Account> = kinds
        .iter()
        .map(|k| Ok((*k, load_or_create_account(&config.data_dir.join(format!("{}.key", k.as_str())))?)))
        .collect::<Result<_>>()?;

    let remote = |k: ServiceKind| config.url(k);
    let mut hosted = Hosted::default();

    macro_rules! link {
        ($field:ident, $kind:expr) => {
            match (&hosted.$field, mono) {
                (Some(s), true) => Link::Local(s.clone()),
                _ => Link::remote(remote($kind)),
            }
        };
    }

    if kinds.contains(&ServiceKind::Registration) {
        let s = contexts[&ServiceKind::Registration].clone();
        hosted.registration = Some(Arc::new(Registration::open(s, &config.data_dir.join("profiles.sqlite"))?));
    }
    if kinds.contains(&ServiceKind::Identity) {
        let s = contexts[&ServiceKind::Identity].clone();
        hosted.identity = Some(Arc::new(Identity::new(s, link!(registration, ServiceKind::Registration))));
    }
    if kinds.contains(&ServiceKind::Management) {
        let s = contexts[&ServiceKind::Management].clone();
        hosted.management = Some(Arc::new(Management::new(
            s,
            accounts[&ServiceKind::Management].clone(),
            link!(identity, ServiceKind::Identity),
            link!(registration, ServiceKind::Registration),
        )));
    }
    if kinds.contains(&ServiceKind::AccessControl) {
        let s = contexts[&ServiceKind::AccessControl].clone();
        hosted.access = Some(Arc::new(AccessControl::new(
            s,
            accounts[&ServiceKind::AccessControl].clone(),
            link!(identity, ServiceKind::Identity),
            link!(registration, ServiceKind::Registration),
            link!(management, ServiceKind::Management),
        )));
    }
    if kinds.contains(&ServiceKind::HashedIndex) {
        let s = contexts[&ServiceKind::HashedIndex].clone();
        hosted.hidx = Some(Arc::new(HashedIndex::new(
            s,
            accounts[&ServiceKind::HashedIndex].clone(),
            link!(registration, ServiceKind::Registration),
            link!(management, ServiceKind::Management),
        )));
    }
    if kinds.contains(&ServiceKind::Data) {
        let s = contexts[&ServiceKind::Data].clone();
        hosted.data = Some(Arc::new(DataProvider::open(
            s,
            &config.data_dir.join("frames"),
            link!(access, ServiceKind::AccessControl),
            link!(hidx, ServiceKind::HashedIndex),
        )?));
    }

    let mut tasks = Vec::new();
    let mut urls = BTreeMap::new();
    let mut addresses = BTreeMap::new();
    for k in &kinds {
        let port = config.ports.get(*k);
        let listener = tokio::net::TcpListener::bind((config.host.as_str(), port))
            .await
            .with_context(|| format!("binding {} on port {port}", k.as_str()))?;
        let addr: SocketAddr = listener.local_addr()?;
        let common = CommonState {
            kind: *k,
            address: accounts[k].address(),
            shared: contexts[k].clone(),
            hosted: hosted.clone(),
        };
        let specific = match k {
            ServiceKind::Registration => registration::routes(hosted.registration.clone().expect("hosted")),
            ServiceKind::Identity => identity::routes(hosted.identity.clone().expect("hosted")),
            ServiceKind::Management => management::routes(hosted.management.clone().expect("hosted")),
            ServiceKind::AccessControl => access::routes(hosted.access.clone().expect("hosted")),
            ServiceKind::HashedIndex => hidx::routes(hosted.hidx.clone().expect("hosted")),
            ServiceKind::Data => data::routes(hosted.data.clone().expect("hosted")),
        };
        let router = specific.merge(common_routes(common));
        tasks.push(tokio::spawn(async move {
            if let Err(e) = http::serve(listener, router).await {
                warn!("service server stopped: {e:#}");
            }
        }));
        urls.insert(*k, format!("http://{}:{}", config.host, addr.port()));
        addresses.insert(*k, accounts[k].address());
        info!("{} service {} on {addr}", k.as_str(), accounts[k].address());
    }

    let boot_hosted = hosted.clone();
    let ports = config.ports;
    tasks.push(tokio::spawn(async move {
        for (k, account) in &accounts {
            if let Err(e) = enroll_service(&contexts[k], account, ports.get(*k)).await {
                warn!("{} enrollment failed: {e:#}", k.as_str());
                return;
            }
        }
        let h = boot_hosted;
        if let Some(s) = &h.registration {
            s.ready.set();
        }
        if let Some(s) = &h.identity {
            s.ready.set();
        }
        if let Some(s) = &h.management {
            s.bootstrap().await;
        }
        if let Some(s) = &h.access {
            s.bootstrap().await;
        }
        if let Some(s) = &h.hidx {
            s.bootstrap().await;
        }
        if let Some(s) = &h.data {
            s.ready.set();
        }
        info!("services ready");
    }));

    Ok(ServicesHandle {
        urls,
        addresses,
        hosted,
        tasks,
    })
}

/// Registers a service account with `role` and obtains writer access to `kind`.
pub async fn register_and_grant(
    account: &Account,
    registration: &Link<Registration>,
    management: &Link<Management>,
    vid: &str,
    role: blendmas_core::security::EntityRole,
    kind: blendmas_core::contracts::ContractKind,
) -> management::GrantReply {
    use blendmas_core::security::{AbiGrantBody, RegisterBody, SignedRequest};
    retry("registering service", || async {
        let req = SignedRequest::sign(
            account,
            crate::util::now_secs(),
            RegisterBody {
                vid: vid.to_string(),
                display_name: vid.to_string(),
                entity_role: role,
            },
        );
        match registration.register(&req).await {
            Err(e) if e.status == axum::http::StatusCode::CONFLICT => Ok(()),
            r => r.map(|_| ()),
        }
    })
    .await;
    retry("requesting writer grant", || async {
        let req = SignedRequest::sign(account, crate::util::now_secs(), AbiGrantBody { contract_kind: kind });
        management.grant(&req).await
    })
    .await
}
