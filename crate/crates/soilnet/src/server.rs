//! TCP transport: bounded line framing and the gateway accept loop.

use std::future::Future;
use std::io;
use std::sync::Arc;
use std::time::Duration;

use soilnet_core::protocol::MAX_FRAME_BYTES;
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;
use tokio::task::JoinSet;

use crate::gateway::{Gateway, Session};

/// How long open connections get to finish after a shutdown request.
const DRAIN_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, PartialEq, Eq)]
pub enum FrameRead {
    /// A complete LF-terminated line is in the buffer.
    Line,
    /// The line exceeded the frame limit. The buffer holds its first bytes
    /// and the rest, through the LF, was discarded.
    TooLong,
    /// Peer closed. Unterminated trailing bytes are dropped.
    Eof,
}

/// Reads one line of at most [`MAX_FRAME_BYTES`] bytes into `buf`, never
/// buffering more than that.
pub async fn read_frame<R: AsyncBufRead + Unpin>(reader: &mut R, buf: &mut Vec<u8>) -> io::Result<FrameRead> {
    buf.clear();
    let n = (&mut *reader).take(MAX_FRAME_BYTES as u64).read_until(b'\n', buf).await?;
    if buf.ends_with(b"\n") {
        return Ok(FrameRead::Line);
    }
    if n < MAX_FRAME_BYTES {
        return Ok(FrameRead::Eof);
    }
    loop {
        let chunk = reader.fill_buf().await?;
        if chunk.is_empty() {
            return Ok(FrameRead::TooLong);
        }
        match chunk.iter().position(|&b| b == b'\n') {
            Some(i) => {
                reader.consume(i + 1);
                return Ok(FrameRead::TooLong);
            }
            None => {
                let len = chunk.len();
                reader.consume(len);
            }
        }
    }
}

async fn connection(stream: TcpStream, gateway: Arc<Gateway>, mut stop: watch::Receiver<bool>) -> io::Result<()> {
    let peer = stream.peer_addr()?;
    let (rd, mut wr) = stream.into_split();
    let mut rd = BufReader::new(rd);
    let mut session = Session::default();
    let mut buf = Vec::with_capacity(MAX_FRAME_BYTES);
    loop {
        let read = tokio::select! {
            r = read_frame(&mut rd, &mut buf) => r?,
            _ = stop.changed() => break,
        };
        let reply = match read {
            FrameRead::Line => gateway.handle_line(&mut session, &buf),
            FrameRead::TooLong => gateway.handle_oversized(&buf),
            FrameRead::Eof => break,
        };
        wr.write_all(reply.render().as_bytes()).await?;
    }
    log::debug!("{peer} closed ({:?})", session.node());
    Ok(())
}

/// Accepts connections until `shutdown` resolves, then lets open
/// connections drain briefly and syncs the store.
pub async fn serve(listener: TcpListener, gateway: Arc<Gateway>, shutdown: impl Future<Output = ()>) -> io::Result<()> {
    let (stop_tx, stop_rx) = watch::channel(false);
    let mut tasks = JoinSet::new();
    tokio::pin!(shutdown);
    loop {
        tokio::select! {
            _ = &mut shutdown => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    log::debug!("connection from {peer}");
                    let _ = stream.set_nodelay(true);
                    let (g, stop) = (Arc::clone(&gateway), stop_rx.clone());
                    tasks.spawn(async move {
                        if let Err(e) = connection(stream, g, stop).await {
                            log::warn!("connection from {peer}: {e}");
                        }
                    });
                }
                Err(e) => log::warn!("accept failed: {e}"),
            },
            Some(_) = tasks.join_next(), if !tasks.is_empty() => {}
        }
    }
    log::info!("shutting down");
    drop(listener);
    let _ = stop_tx.send(true);
    if tokio::time::timeout(DRAIN_TIMEOUT, async { while tasks.join_next().await.is_some() {} })
        .await
        .is_err()
    {
        tasks.abort_all();
    }
    gateway.store().flush().map_err(io::Error::other)?;
    let c = gateway.counters();
    log::info!(
        "received {} accepted {} duplicate {} out_of_range {} malformed {}",
        c.received,
        c.accepted,
        c.duplicate,
        c.out_of_range,
        c.malformed
    );
    Ok(())
}

/// Installs SIGINT and SIGTERM handlers and returns a future that resolves
/// on the first of them. Must be called inside the runtime; signals arriving
/// after this call are not lost even if the future is polled later.
pub fn termination_signal() -> io::Result<impl Future<Output = ()>> {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate())?;
        let mut int = signal(SignalKind::interrupt())?;
        Ok(async move {
            tokio::select! {
                _ = term.recv() => {}
                _ = int.recv() => {}
            }
        })
    }
    #[cfg(not(unix))]
    {
        Ok(async {
            let _ = tokio::signal::ctrl_c().await;
        })
    }
}
