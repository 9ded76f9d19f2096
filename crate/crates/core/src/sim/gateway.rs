//! NDJSON console gateway over TCP.
//!
//! The engine never touches a socket. A listener thread accepts consoles,
//! a reader thread per connection parses command lines into [`Inbound`]
//! values on one channel, and a writer thread fans outbound lines to every
//! connected console. Those two queues are the only shared state.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::engine::Inbound;
use crate::basestation::Command;

/// Parses one console line. Blank lines yield `None`.
pub fn parse_command_line(line: &str) -> Option<Inbound> {
    let text = line.trim();
    if text.is_empty() {
        return None;
    }
    Some(match serde_json::from_str::<Command>(text) {
        Ok(c) => Inbound::Command(c),
        Err(e) => Inbound::Malformed { line: text.chars().take(200).collect(), reason: e.to_string() },
    })
}

const WRITE_TIMEOUT: Duration = Duration::from_secs(2);

type Clients = Arc<Mutex<Vec<TcpStream>>>;

pub struct GatewayServer {
    addr: SocketAddr,
    commands: Receiver<Inbound>,
    out: Sender<String>,
    clients: Clients,
    writer: thread::JoinHandle<()>,
}

impl GatewayServer {
    /// Binds `addr` (port 0 picks a free port) and starts the I/O threads.
    pub fn bind(addr: &str) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let (cmd_tx, commands) = mpsc::channel();
        let (out, out_rx) = mpsc::channel::<String>();
        let clients: Clients = Arc::default();

        let accept_clients = Arc::clone(&clients);
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                log::info!("console connected from {:?}", stream.peer_addr().ok());
                if let Ok(w) = stream.try_clone() {
                    // a console that stops reading is dropped rather than stalling the others
                    let _ = w.set_write_timeout(Some(WRITE_TIMEOUT));
                    accept_clients.lock().expect("client list").push(w);
                }
                let tx = cmd_tx.clone();
                thread::spawn(move || read_commands(stream, tx));
            }
        });

        let write_clients = Arc::clone(&clients);
        let writer = thread::spawn(move || {
            for line in out_rx {
                let mut list = write_clients.lock().expect("client list");
                list.retain_mut(|s| s.write_all(line.as_bytes()).and_then(|_| s.write_all(b"\n")).is_ok());
            }
        });

        Ok(GatewayServer { addr, commands, out, clients, writer })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn client_count(&self) -> usize {
        self.clients.lock().expect("client list").len()
    }

    /// Commands received so far, in arrival order. Never blocks.
    pub fn poll_commands(&self) -> Vec<Inbound> {
        self.commands.try_iter().collect()
    }

    /// Queues a line for every connected console. Never blocks.
    pub fn publish(&self, line: String) {
        let _ = self.out.send(line);
    }

    /// Blocks until at least one console is connected or `timeout` passes.
    pub fn wait_for_client(&self, timeout: Duration) -> bool {
        let deadline = Instant::now().checked_add(timeout);
        while self.client_count() == 0 {
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return false;
            }
            thread::sleep(Duration::from_millis(10));
        }
        true
    }

    /// Writes every published line, then closes all console connections.
    pub fn close(self) {
        drop(self.out);
        let _ = self.writer.join();
        for s in self.clients.lock().expect("client list").iter() {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}

fn read_commands(stream: TcpStream, tx: Sender<Inbound>) {
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { break };
        if let Some(msg) = parse_command_line(&line) {
            if tx.send(msg).is_err() {
                break;
            }
        }
    }
}
