#![allow(dead_code)]

use std::sync::Arc;

use soilnet::gateway::Gateway;
use soilnet::store::{Store, StoreOptions};
use soilnet_core::field::SoilFieldModel;
use soilnet_core::sim::{ProfileConfig, Simulator};
use soilnet_core::{CalibrationModel, Channel, Ident, RawReading, StoredRow};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

/// 2024-06-01T00:00:00Z
pub const START: i64 = 1_717_200_000;
pub const HOUR: u64 = 3600;

pub fn ident(s: &str) -> Ident {
    Ident::new(s).unwrap()
}

pub fn simulator(profile: &str, seed: u64) -> Simulator {
    Simulator::new(
        ProfileConfig::new(ident(profile), seed),
        SoilFieldModel::default(),
        CalibrationModel::published(),
    )
    .unwrap()
}

/// Rows as the gateway would store them with the published model and
/// `recv_timestamp` equal to the node timestamp.
pub fn stored(readings: impl IntoIterator<Item = RawReading>) -> Vec<StoredRow> {
    let model = CalibrationModel::published();
    readings
        .into_iter()
        .map(|reading| StoredRow {
            vwc_percent: match reading.channel {
                Channel::MoistureVoltage => model.apply(reading.value).ok(),
                Channel::TemperatureC => None,
            },
            recv_timestamp: reading.timestamp,
            reading,
        })
        .collect()
}

pub fn sort_rows(rows: &mut [StoredRow]) {
    rows.sort_by(|a, b| {
        let key = |r: &StoredRow| (r.reading.profile_id.clone(), r.reading.timestamp, r.reading.seq, r.reading.depth_cm, r.reading.channel);
        key(a).cmp(&key(b))
    });
}

pub fn open_store(dir: &std::path::Path) -> Arc<Store> {
    Arc::new(Store::open(dir, StoreOptions::default()).unwrap())
}

/// A gateway served on an ephemeral loopback port.
pub struct Running {
    pub addr: String,
    pub gateway: Arc<Gateway>,
    stop: oneshot::Sender<()>,
    task: JoinHandle<std::io::Result<()>>,
}

impl Running {
    pub async fn start(store: Arc<Store>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        Self::start_on(listener, store).await
    }

    pub async fn start_on(listener: TcpListener, store: Arc<Store>) -> Self {
        let addr = listener.local_addr().unwrap().to_string();
        let gateway = Arc::new(Gateway::new(store, Some(CalibrationModel::published())).unwrap());
        let (stop, rx) = oneshot::channel();
        let task = tokio::spawn(soilnet::server::serve(listener, gateway.clone(), async {
            let _ = rx.await;
        }));
        Self { addr, gateway, stop, task }
    }

    pub async fn shutdown(self) -> Arc<Gateway> {
        let _ = self.stop.send(());
        self.task.await.unwrap().unwrap();
        self.gateway
    }
}
