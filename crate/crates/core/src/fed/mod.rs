//! Horizontal federated learning with synchronous FedAvg rounds.
//!
//! Each round the server broadcasts the global parameters, every client
//! trains locally on its own shard and replies with its parameters, and the
//! server averages them weighted by sample count and evaluates the result on
//! a pooled held-out test set. All clients take part in every round.

mod aggregate;
mod client;
pub mod codec;
mod partition;
pub mod transport;

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread;

use serde::{Deserialize, Serialize};

pub use aggregate::fedavg_aggregate;
pub use client::Client;
pub use partition::{partition, Shard};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{evaluate_with_loss, Evaluation, LossConfig, Metrics, Model, ModelSpec, TrainConfig};
use codec::{Message, DEFAULT_MAX_FRAME};
use transport::{channel_pair, Link, TcpLink};

/// Parameters a client sends back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundUpdate {
    pub client_id: u32,
    pub params: Vec<f64>,
    pub n_samples: u64,
    /// Mean training loss of the last local epoch.
    pub mean_loss: f64,
    /// Training-pass metrics of the last local epoch.
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransportKind {
    #[default]
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FedConfig {
    pub n_clients: usize,
    pub n_rounds: usize,
    pub local_epochs: usize,
    /// `None` splits the whole training set evenly.
    pub samples_per_client: Option<usize>,
    pub seed: u64,
    pub transport: TransportKind,
    /// Address the TCP server binds; port 0 picks a free one.
    pub addr: String,
    pub max_frame: usize,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            n_clients: 4,
            n_rounds: 15,
            local_epochs: 1,
            samples_per_client: None,
            seed: 0,
            transport: TransportKind::InProcess,
            addr: "127.0.0.1:0".into(),
            max_frame: DEFAULT_MAX_FRAME,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::Invalid("n_clients must be >= 1".into()));
        }
        if self.n_rounds == 0 {
            return Err(Error::Invalid("n_rounds must be >= 1".into()));
        }
        Ok(())
    }
}

/// Local statistics a client reported in one round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientRound {
    pub client_id: u32,
    pub n_samples: u64,
    pub mean_loss: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Global model on the pooled test set after aggregation.
    pub global: Evaluation,
    pub clients: Vec<ClientRound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedHistory {
    pub rounds: Vec<RoundRecord>,
    #[serde(skip)]
    pub final_params: Vec<f64>,
}

impl FedHistory {
    pub fn final_metrics(&self) -> Option<Metrics> {
        self.rounds.last().map(|r| r.global.metrics)
    }
}

/// Server side of the protocol: drives `n_rounds` over already-open links.
pub struct Server {
    pub model: Model,
    pub test: Dataset,
    pub loss_config: LossConfig,
    pub n_rounds: usize,
}

impl Server {
    /// Waits for one `JOIN` per link, then runs all rounds and shuts the
    /// clients down. Any client error aborts the run.
    pub fn run(mut self, links: Vec<Box<dyn Link + '_>>) -> Result<FedHistory> {
        let mut joined: Vec<(u32, Box<dyn Link + '_>)> = Vec::with_capacity(links.len());
        for (i, mut link) in links.into_iter().enumerate() {
            match link.recv() {
                Ok(Message::Join { client_id }) => {
                    if joined.iter().any(|(id, _)| *id == client_id) {
                        return Err(Error::Transport(format!("client id {client_id} joined twice")));
                    }
                    joined.push((client_id, link));
                }
                Ok(other) => {
                    return Err(Error::Transport(format!(
                        "connection {i}: expected JOIN, got {}",
                        other.kind()
                    )))
                }
                Err(e) => return Err(Error::Transport(format!("connection {i} failed to join: {e}"))),
            }
        }
        joined.sort_by_key(|(id, _)| *id);

        let mut rounds = Vec::with_capacity(self.n_rounds);
        for round in 0..self.n_rounds {
            let params = self.model.params_flat();
            let msg = Message::GlobalModel {
                round: round as u32,
                params,
            };
            for (id, link) in &mut joined {
                link.send(&msg)
                    .map_err(|e| Error::Transport(format!("round {round}: client {id}: {e}")))?;
            }
            let mut updates = Vec::with_capacity(joined.len());
            for (id, link) in &mut joined {
                match link.recv() {
                    Ok(Message::LocalUpdate(u)) if u.client_id == *id => updates.push(u),
                    Ok(other) => {
                        return Err(Error::Transport(format!(
                            "round {round}: client {id} sent unexpected {}",
                            other.kind()
                        )))
                    }
                    Err(e) => {
                        return Err(Error::Transport(format!("round {round}: client {id} failed: {e}")))
                    }
                }
            }
            let aggregated = fedavg_aggregate(&updates)?;
            self.model.set_params_flat(&aggregated)?;
            let global = evaluate_with_loss(&self.model, &self.test, &self.loss_config)?;
            log::info!(
                "round {round}: test accuracy {:.4}, fn rate {:.4}",
                global.metrics.accuracy,
                global.metrics.fn_rate
            );
            for (_, link) in &mut joined {
                // informational only
                let _ = link.send(&Message::Metrics(global.metrics));
            }
            rounds.push(RoundRecord {
                round,
                global,
                clients: updates
                    .iter()
                    .map(|u| ClientRound {
                        client_id: u.client_id,
                        n_samples: u.n_samples,
                        mean_loss: u.mean_loss,
                        metrics: u.metrics,
                    })
                    .collect(),
            });
        }
        for (_, link) in &mut joined {
            let _ = link.send(&Message::Shutdown);
        }
        Ok(FedHistory {
            rounds,
            final_params: self.model.params_flat(),
        })
    }
}

/// Builds the clients of a federation from the partitioned training set.
pub fn make_clients(
    config: &FedConfig,
    train: &TrainConfig,
    spec: &ModelSpec,
    train_data: &Dataset,
) -> Result<Vec<Client>> {
    config.validate()?;
    let shards = partition(
        &train_data.labels,
        config.n_clients,
        config.samples_per_client,
        config.seed,
    )?;
    shards
        .iter()
        .map(|s| {
            Client::new(
                s.client_id,
                spec.clone(),
                train_data.subset(&s.indices),
                train,
                config.local_epochs,
                config.seed,
            )
        })
        .collect()
}

fn join_clients(handles: Vec<thread::ScopedJoinHandle<'_, Result<()>>>, ids: &[u32]) -> Result<()> {
    let mut first_err = None;
    for (h, id) in handles.into_iter().zip(ids) {
        let r = h
            .join()
            .map_err(|_| Error::Transport(format!("client {id} panicked")))
            .and_then(|r| r.map_err(|e| Error::Transport(format!("client {id}: {e}"))));
        if let Err(e) = r {
            first_err.get_or_insert(e);
        }
    }
    first_err.map_or(Ok(()), Err)
}

/// Runs a full federation: partition, `n_rounds` of broadcast / local
/// training / FedAvg, and per-round evaluation on `test_data`. The initial
/// global model is `Model::new(spec, config.seed)`.
pub fn run_rounds(
    config: &FedConfig,
    train: &TrainConfig,
    spec: &ModelSpec,
    train_data: &Dataset,
    test_data: &Dataset,
) -> Result<FedHistory> {
    let clients = make_clients(config, train, spec, train_data)?;
    let server = Server {
        model: Model::new(spec.clone(), config.seed)?,
        test: test_data.clone(),
        loss_config: train.loss_config()?,
        n_rounds: config.n_rounds,
    };
    let ids: Vec<u32> = clients.iter().map(|c| c.client_id).collect();
    match config.transport {
        TransportKind::InProcess => thread::scope(|s| {
            let mut server_links: Vec<Box<dyn Link>> = Vec::new();
            let mut handles = Vec::new();
            for client in clients {
                let (server_end, mut client_end) = channel_pair(config.max_frame);
                server_links.push(Box::new(server_end));
                handles.push(s.spawn(move || client.serve(&mut client_end)));
            }
            let result = server.run(server_links);
            let joined = join_clients(handles, &ids);
            let history = result?;
            joined?;
            Ok(history)
        }),
        TransportKind::Tcp => {
            let listener = TcpListener::bind(&config.addr)?;
            let addr = listener.local_addr()?;
            let max_frame = config.max_frame;
            thread::scope(|s| {
                let handles: Vec<_> = clients
                    .into_iter()
                    .map(|client| s.spawn(move || run_tcp_client(addr, client, max_frame)))
                    .collect();
                let result = accept_clients(&listener, ids.len(), max_frame)
                    .and_then(|links| server.run(links));
                let joined = join_clients(handles, &ids);
                let history = result?;
                joined?;
                Ok(history)
            })
        }
    }
}

/// Accepts `n` TCP connections.
pub fn accept_clients(listener: &TcpListener, n: usize, max_frame: usize) -> Result<Vec<Box<dyn Link>>> {
    (0..n)
        .map(|_| {
            let (stream, peer) = listener.accept()?;
            log::debug!("accepted {peer}");
            Ok(Box::new(TcpLink::new(stream, max_frame)?) as Box<dyn Link>)
        })
        .collect()
}

/// Connects `client` to a server at `addr` and serves until shutdown.
pub fn run_tcp_client(addr: SocketAddr, client: Client, max_frame: usize) -> Result<()> {
    let stream = TcpStream::connect(addr)?;
    let mut link = TcpLink::new(stream, max_frame)?;
    client.serve(&mut link)
}
