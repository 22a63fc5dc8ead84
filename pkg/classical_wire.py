#!/usr/bin/env python3
"""
Canal clássico entre Alice e Bob

Protocolo de quadros binário e determinístico:

    "QKD1" | tipo (u8) | tamanho do payload (u32 big-endian) | payload

Cadeias de bits são empacotadas com o bit mais significativo primeiro e
prefixadas por um byte com o número de bits de enchimento. Índices de ciclo
de DETECTIONS vão como diferenças em inteiros variáveis (LEB128 sem sinal).

O transporte é qualquer socket de fluxo confiável: pares locais
(socket.socketpair) para a execução em processo e TCP para dois processos.
"""

import socket
import struct
import threading
from dataclasses import dataclass, fields
from enum import IntEnum
from typing import Callable, ClassVar, Dict, List, Optional, Tuple, Type

import numpy as np

from logging_config import get_logger

logger = get_logger('qkd_sim.wire')

MAGIC = b'QKD1'
HEADER = struct.Struct('>4sBI')
MAX_PAYLOAD = 1 << 24
DEFAULT_TIMEOUT_S = 30.0
HASH_BITS = 50
DIGEST_BYTES = 32

WIRE_ERROR_CODES = ('bad_magic', 'truncated', 'oversize', 'unknown_type',
                    'malformed', 'channel_closed', 'timeout')


class WireError(Exception):
    """Erro de quadro ou de transporte, com código tipado"""

    def __init__(self, code: str, message: str = ""):
        if code not in WIRE_ERROR_CODES:
            raise ValueError(f"Código de erro de canal desconhecido: {code}")
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


class MessageType(IntEnum):
    HELLO = 0x01
    DETECTIONS = 0x02
    BASIS_MATCH = 0x03
    SAMPLE_REQUEST = 0x04
    SAMPLE_BITS = 0x05
    CASCADE_SHUFFLE = 0x06
    CASCADE_PARITY_REQ = 0x07
    CASCADE_PARITY_RESP = 0x08
    PA_SEED = 0x09
    VERIFY_HASH = 0x0A
    ABORT = 0x0B
    DONE = 0x0C


class AbortReason(IntEnum):
    PROTOCOL_ERROR = 0x01
    VERSION_MISMATCH = 0x02
    CONFIG_MISMATCH = 0x03
    NO_BITS = 0x04
    INSUFFICIENT_BITS = 0x05
    QBER_THRESHOLD = 0x06
    RECONCILIATION_FAILED = 0x07
    NO_SECURE_BITS = 0x08
    CHANNEL_CLOSED = 0x09
    TIMEOUT = 0x0A
    MALFORMED_FRAME = 0x0B

    @property
    def label(self) -> str:
        return self.name.lower()


# Cadeias de bits

def pack_bits(bits) -> bytes:
    """Byte de enchimento + bits empacotados (MSB primeiro, enchimento zero)"""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size and bits.max() > 1:
        raise ValueError("Cadeia de bits com valor diferente de 0/1")
    pad = (-len(bits)) % 8
    return bytes([pad]) + np.packbits(bits).tobytes()


def unpack_bits(data: bytes) -> np.ndarray:
    if len(data) < 1:
        raise ValueError("Cadeia de bits sem byte de enchimento")
    pad = data[0]
    body = np.frombuffer(data[1:], dtype=np.uint8)
    if pad > 7 or (body.size == 0 and pad != 0):
        raise ValueError(f"Enchimento inválido: {pad}")
    bits = np.unpackbits(body)
    if pad and np.any(bits[len(bits) - pad:]):
        raise ValueError("Bits de enchimento diferentes de zero")
    return bits[:len(bits) - pad].copy()


# Inteiros variáveis (LEB128 sem sinal), vetorizados

_VARINT_MAX_BYTES = 10


def encode_varints(values) -> bytes:
    values = np.asarray(values, dtype=np.uint64)
    if values.size == 0:
        return b''
    shifts = np.arange(_VARINT_MAX_BYTES, dtype=np.uint64) * np.uint64(7)
    shifted = values[:, None] >> shifts[None, :]
    active = shifted > 0
    active[:, 0] = True
    groups = (shifted & np.uint64(0x7F)).astype(np.uint8)
    continuation = np.zeros_like(active)
    continuation[:, :-1] = active[:, 1:]
    groups |= continuation.astype(np.uint8) << 7
    return groups[active].tobytes()


def decode_varints(data: bytes, count: int) -> Tuple[np.ndarray, int]:
    """Decodifica `count` inteiros; retorna (valores, bytes consumidos)"""
    if count == 0:
        return np.zeros(0, dtype=np.uint64), 0
    raw = np.frombuffer(data, dtype=np.uint8)
    ends = np.flatnonzero((raw & 0x80) == 0)
    if len(ends) < count:
        raise ValueError("Inteiros variáveis truncados")
    consumed = int(ends[count - 1]) + 1
    raw = raw[:consumed]
    starts = np.concatenate(([0], ends[:count - 1] + 1))
    group_id = np.repeat(np.arange(count), np.diff(np.concatenate((starts, [consumed]))))
    position = np.arange(consumed) - starts[group_id]
    if position.max() >= _VARINT_MAX_BYTES:
        raise ValueError("Inteiro variável longo demais")
    parts = (raw & 0x7F).astype(np.uint64) << (position.astype(np.uint64) * np.uint64(7))
    return np.bitwise_or.reduceat(parts, starts), consumed


# Mensagens

def _same(a, b) -> bool:
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        return np.array_equal(np.asarray(a), np.asarray(b))
    return a == b


@dataclass(eq=False)
class Message:
    msg_type: ClassVar[MessageType]

    def encode_payload(self) -> bytes:
        raise NotImplementedError

    @classmethod
    def decode_payload(cls, payload: bytes) -> 'Message':
        raise NotImplementedError

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return all(_same(getattr(self, f.name), getattr(other, f.name)) for f in fields(self))


@dataclass(eq=False)
class Hello(Message):
    msg_type: ClassVar[MessageType] = MessageType.HELLO
    version: int
    config_digest: bytes

    def encode_payload(self) -> bytes:
        if len(self.config_digest) != DIGEST_BYTES:
            raise ValueError("Resumo da configuração deve ter 32 bytes")
        return struct.pack('>H', self.version) + self.config_digest

    @classmethod
    def decode_payload(cls, payload: bytes) -> 'Hello':
        if len(payload) != 2 + DIGEST_BYTES:
            raise ValueError("HELLO com tamanho inválido")
        return cls(struct.unpack_from('>H', payload)[0], bytes(payload[2:]))


@dataclass(eq=False)
class Detections(Message):
    """Ciclos com detecção (estritamente crescentes) e as bases de Bob"""
    msg_type: ClassVar[MessageType] = MessageType.DETECTIONS
    cycles: np.ndarray
    bases: np.ndarray

    def encode_payload(self) -> bytes:
        cycles = np.asarray(self.cycles, dtype=np.int64)
        if len(cycles) != len(self.bases):
            raise ValueError("DETECTIONS com listas de tamanhos diferentes")
        if len(cycles) and (cycles[0] < 0 or np.any(np.diff(cycles) <= 0)):
            raise ValueError("Ciclos de detecção devem ser estritamente crescentes")
        deltas = np.diff(cycles, prepend=0) if len(cycles) else cycles
        return struct.pack('>I', len(cycles)) + encode_varints(deltas) + pack_bits(self.bases)

    @classmethod
    def decode_payload(cls, payload: bytes) -> 'Detections':
        (count,) = struct.unpack_from('>I', payload)
        deltas, used = decode_varints(payload[4:], count)
        if count > 1 and np.any(deltas[1:] == 0):
            raise ValueError("Ciclos de detecção repetidos")
        bases = unpack_bits(payload[4 + used:])
        if len(bases) != count:
            raise ValueError("Número de bases difere do número de detecções")
        return cls(np.cumsum(deltas).astype(np.int64), bases)


@dataclass(eq=False)
class BasisMatch(Message):
    msg_type: ClassVar[MessageType] = MessageType.BASIS_MATCH
    keep: np.ndarray

    def encode_payload(self) -> bytes:
        return pack_bits(self.keep)

    @classmethod
    def decode_payload(cls, payload: bytes) -> 'BasisMatch':
        return cls(unpack_bits(payload))


@dataclass(eq=False)
class SampleRequest(Message):
    msg_type: ClassVar[MessageType] = MessageType.SAMPLE_REQUEST
    positions: np.ndarray

    def encode_payload(self) -> bytes:
        positions = np.asarray(self.positions, dtype='>u4')
        return struct.pack('>I', len(positions)) + positions.tobytes()

    @classmethod
    def decode_payload(cls, payload: bytes) -> 'SampleRequest':
        (count,) = struct.unpack_from('>I', payload)
        if len(payload) != 4 + 4 * count:
            raise ValueError("SAMPLE_REQUEST com tamanho inválido")
        return cls(np.frombuffer(payload[4:], dtype='>u4').astype(np.int64))


@dataclass(eq=False)
class SampleBits(Message):
    msg_type: ClassVar[MessageType] = MessageType.SAMPLE_BITS
    bits: np.ndarray

    def encode_payload(self) -> bytes:
        return pack_bits(self.bits)

    @classmethod
    def decode_payload(cls, payload: bytes) -> 'SampleBits':
        return cls(unpack_bits(payload))


@dataclass(eq=False)
class CascadeShuffle(Message):
    msg_type: ClassVar[MessageType] = MessageType.CASCADE_SHUFFLE
    pass_index: int
    seed: int

    def encode_payload(self) -> bytes:
        return struct.pack('>BQ', self.pass_index, self.seed)

    @classmethod
    def decode_payload(cls, payload: bytes) -> 'CascadeShuffle':
        if len(payload) != 9:
            raise ValueError("CASCADE_SHUFFLE com tamanho inválido")
        return cls(*struct.unpack('>BQ', payload))


_RANGE = np.dtype([('pass', 'u1'), ('start', '>u4'), ('end', '>u4')])


@dataclass(eq=False)
class CascadeParityReq(Message):
    """Faixas (passada, início, fim) na ordem embaralhada da passada"""
    msg_type: ClassVar[MessageType] = MessageType.CASCADE_PARITY_REQ
    ranges: np.ndarray   # (k, 3) inteiros

    def encode_payload(self) -> bytes:
        ranges = np.asarray(self.ranges, dtype=np.int64).reshape(-1, 3)
        if np.any(ranges[:, 1] >= ranges[:, 2]):
            raise ValueError("Faixa de paridade vazia")
        packed = np.zeros(len(ranges), dtype=_RANGE)
        packed['pass'], packed['start'], packed['end'] = ranges[:, 0], ranges[:, 1], ranges[:, 2]
        return struct.pack('>I', len(ranges)) + packed.tobytes()

    @classmethod
    def decode_payload(cls, payload: bytes) -> 'CascadeParityReq':
        (count,) = struct.unpack_from('>I', payload)
        if len(payload) != 4 + _RANGE.itemsize * count:
            raise ValueError("CASCADE_PARITY_REQ com tamanho inválido")
        packed = np.frombuffer(payload[4:], dtype=_RANGE)
        ranges = np.stack([packed['pass'], packed['start'], packed['end']], axis=1).astype(np.int64)
        if np.any(ranges[:, 1] >= ranges[:, 2]):
            raise ValueError("Faixa de paridade vazia")
        return cls(ranges.reshape(-1, 3))


@dataclass(eq=False)
class CascadeParityResp(Message):
    msg_type: ClassVar[MessageType] = MessageType.CASCADE_PARITY_RESP
    parities: np.ndarray

    def encode_payload(self) -> bytes:
        return pack_bits(self.parities)

    @classmethod
    def decode_payload(cls, payload: bytes) -> 'CascadeParityResp':
        return cls(unpack_bits(payload))


@dataclass(eq=False)
class PASeed(Message):
    msg_type: ClassVar[MessageType] = MessageType.PA_SEED
    final_length: int
    seed: np.ndarray

    def encode_payload(self) -> bytes:
        return struct.pack('>I', self.final_length) + pack_bits(self.seed)

    @classmethod
    def decode_payload(cls, payload: bytes) -> 'PASeed':
        (m,) = struct.unpack_from('>I', payload)
        return cls(m, unpack_bits(payload[4:]))


@dataclass(eq=False)
class VerifyHash(Message):
    msg_type: ClassVar[MessageType] = MessageType.VERIFY_HASH
    salt: int
    digest: int   # verify_bits bits (HASH_BITS por padrão), até 64

    def encode_payload(self) -> bytes:
        if not 0 <= self.digest < (1 << 64):
            raise ValueError("Hash de verificação excede 64 bits")
        return struct.pack('>QQ', self.salt, self.digest)

    @classmethod
    def decode_payload(cls, payload: bytes) -> 'VerifyHash':
        if len(payload) != 16:
            raise ValueError("VERIFY_HASH com tamanho inválido")
        return cls(*struct.unpack('>QQ', payload))


@dataclass(eq=False)
class Abort(Message):
    msg_type: ClassVar[MessageType] = MessageType.ABORT
    reason: AbortReason

    def encode_payload(self) -> bytes:
        return bytes([int(self.reason)])

    @classmethod
    def decode_payload(cls, payload: bytes) -> 'Abort':
        if len(payload) != 1:
            raise ValueError("ABORT com tamanho inválido")
        return cls(AbortReason(payload[0]))


@dataclass(eq=False)
class Done(Message):
    msg_type: ClassVar[MessageType] = MessageType.DONE
    digest: bytes

    def encode_payload(self) -> bytes:
        if len(self.digest) != DIGEST_BYTES:
            raise ValueError("DONE exige resumo de 32 bytes")
        return bytes(self.digest)

    @classmethod
    def decode_payload(cls, payload: bytes) -> 'Done':
        if len(payload) != DIGEST_BYTES:
            raise ValueError("DONE exige resumo de 32 bytes")
        return cls(bytes(payload))


MESSAGE_CLASSES: Dict[MessageType, Type[Message]] = {
    cls.msg_type: cls for cls in (Hello, Detections, BasisMatch, SampleRequest, SampleBits,
                                  CascadeShuffle, CascadeParityReq, CascadeParityResp,
                                  PASeed, VerifyHash, Abort, Done)
}


# Quadros

def encode_frame(msg: Message, max_payload: int = MAX_PAYLOAD) -> bytes:
    try:
        payload = msg.encode_payload()
    except (ValueError, struct.error, OverflowError) as e:
        raise WireError('malformed', str(e)) from e
    if len(payload) > max_payload:
        raise WireError('oversize', f"payload de {len(payload)} bytes")
    return HEADER.pack(MAGIC, int(msg.msg_type), len(payload)) + payload


def parse_header(header: bytes, max_payload: int = MAX_PAYLOAD) -> Tuple[MessageType, int]:
    prefix = header[:len(MAGIC)]
    if prefix != MAGIC[:len(prefix)]:
        raise WireError('bad_magic', prefix.hex())
    if len(header) < HEADER.size:
        raise WireError('truncated', "cabeçalho incompleto")
    _, type_code, length = HEADER.unpack(header[:HEADER.size])
    if length > max_payload:
        raise WireError('oversize', f"payload declarado de {length} bytes")
    try:
        msg_type = MessageType(type_code)
    except ValueError:
        raise WireError('unknown_type', f"0x{type_code:02X}") from None
    return msg_type, length


def decode_payload(msg_type: MessageType, payload: bytes) -> Message:
    try:
        return MESSAGE_CLASSES[msg_type].decode_payload(bytes(payload))
    except (ValueError, struct.error, IndexError, OverflowError) as e:
        raise WireError('malformed', f"{msg_type.name}: {e}") from e


def decode_frame(data: bytes, max_payload: int = MAX_PAYLOAD) -> Message:
    """Decodifica exatamente um quadro; bytes excedentes são rejeitados"""
    msg_type, length = parse_header(bytes(data[:HEADER.size]), max_payload)
    payload = data[HEADER.size:]
    if len(payload) < length:
        raise WireError('truncated', f"esperados {length} bytes, disponíveis {len(payload)}")
    if len(payload) > length:
        raise WireError('malformed', "bytes após o fim do quadro")
    return decode_payload(msg_type, payload)


# Transporte

class WireTap:
    """Registra todos os quadros enviados, na ordem, com o papel de quem enviou"""

    def __init__(self):
        self._lock = threading.Lock()
        self.frames: List[Tuple[str, bytes]] = []

    def record(self, sender: str, frame: bytes) -> None:
        with self._lock:
            self.frames.append((sender, frame))


class FrameChannel:
    """Uma ponta do canal clássico sobre um socket de fluxo"""

    def __init__(self, sock: socket.socket, role: str = '', timeout_s: float = DEFAULT_TIMEOUT_S,
                 max_payload: int = MAX_PAYLOAD, tap: Optional[WireTap] = None):
        self.sock = sock
        self.role = role
        self.max_payload = max_payload
        self.tap = tap
        self.sock.settimeout(timeout_s)

    def send(self, msg: Message) -> None:
        frame = encode_frame(msg, self.max_payload)
        try:
            self.sock.sendall(frame)
        except socket.timeout as e:
            raise WireError('timeout', "envio") from e
        except OSError as e:
            raise WireError('channel_closed', str(e)) from e
        if self.tap is not None:
            self.tap.record(self.role, frame)
        logger.debug(f"[{self.role}] -> {msg.msg_type.name} ({len(frame)} bytes)")

    def recv(self) -> Message:
        header = self._read_exact(HEADER.size)
        msg_type, length = parse_header(header, self.max_payload)
        payload = self._read_exact(length)
        msg = decode_payload(msg_type, payload)
        logger.debug(f"[{self.role}] <- {msg_type.name} ({length} bytes)")
        return msg

    def _read_exact(self, size: int) -> bytes:
        chunks = []
        remaining = size
        while remaining:
            try:
                chunk = self.sock.recv(min(remaining, 1 << 16))
            except socket.timeout as e:
                raise WireError('timeout', f"sem dados em {self.sock.gettimeout()} s") from e
            except OSError as e:
                raise WireError('channel_closed', str(e)) from e
            if not chunk:
                raise WireError('channel_closed', "conexão encerrada pelo par")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b''.join(chunks)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


def inproc_pair(timeout_s: float = DEFAULT_TIMEOUT_S, max_payload: int = MAX_PAYLOAD,
                tap: Optional[WireTap] = None) -> Tuple[FrameChannel, FrameChannel]:
    """Par de canais conectados no mesmo processo (alice, bob)"""
    a, b = socket.socketpair()
    return (FrameChannel(a, 'alice', timeout_s, max_payload, tap),
            FrameChannel(b, 'bob', timeout_s, max_payload, tap))


def parse_transport(spec: str) -> Tuple[str, Optional[str], Optional[int]]:
    """'inproc' ou 'tcp:host:port' -> (tipo, host, porta)"""
    if spec == 'inproc':
        return 'inproc', None, None
    parts = spec.split(':')
    if len(parts) == 3 and parts[0] == 'tcp':
        try:
            port = int(parts[2])
        except ValueError:
            raise ValueError(f"Porta inválida em '{spec}'") from None
        if not 0 <= port <= 65535:
            raise ValueError(f"Porta fora do intervalo em '{spec}'")
        return 'tcp', parts[1], port
    raise ValueError(f"Transporte inválido: '{spec}' (use inproc ou tcp:host:port)")


def listen_tcp(host: str, port: int, timeout_s: float = DEFAULT_TIMEOUT_S,
               max_payload: int = MAX_PAYLOAD, role: str = 'alice',
               on_listening: Optional[Callable[[int], None]] = None,
               accept_timeout_s: Optional[float] = None) -> FrameChannel:
    """Aceita uma única conexão TCP; on_listening recebe a porta efetiva"""
    with socket.create_server((host, port)) as server:
        server.settimeout(accept_timeout_s)
        bound_port = server.getsockname()[1]
        logger.info(f"Aguardando conexão em {host}:{bound_port}")
        if on_listening is not None:
            on_listening(bound_port)
        try:
            conn, peer = server.accept()
        except socket.timeout as e:
            raise WireError('timeout', "nenhuma conexão recebida") from e
    logger.info(f"Conexão aceita de {peer[0]}:{peer[1]}")
    return FrameChannel(conn, role, timeout_s, max_payload)


def connect_tcp(host: str, port: int, timeout_s: float = DEFAULT_TIMEOUT_S,
                max_payload: int = MAX_PAYLOAD, role: str = 'bob') -> FrameChannel:
    try:
        sock = socket.create_connection((host, port), timeout=timeout_s)
    except socket.timeout as e:
        raise WireError('timeout', f"conexão a {host}:{port}") from e
    except OSError as e:
        raise WireError('channel_closed', f"conexão a {host}:{port}: {e}") from e
    return FrameChannel(sock, role, timeout_s, max_payload)
