"""
演示数据集文件格式 (.acds)

全部小端:
    magic    4 bytes  b"ACDS"
    version  u32      (当前为 2)
    count    u32      轨迹条数
    每条轨迹:
        task_len  u32, task UTF-8 bytes
        seed      u64
        T         u32
        n_ids     u32, ids u32 * n_ids
        freq      f32
        T 条定长记录, 每条依次为
            views   f32 * (3·3·32·32)   顺序 [view, channel, i, j]
            cloud   f32 * (256·4)       列 x, y, z, intensity(填充为 −1)
            state   f32 * 12
            action  f32 * 5             列 v, ω, Δj1, Δj2, grip
            phase   u8                  PHASES 下标, 255 表示未标注
"""

import struct
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from src.core.errors import BadMagicError, FormatError, VersionMismatchError
from src.data.trajectory import Trajectory
from src.numerics.param_store import ByteReader
from src.sim.observation import STATE_DIM
from src.sim.sensors import CLOUD_POINTS, IMAGE_CHANNELS, IMAGE_SIZE, VIEW_IDS
from src.sim.tasks import PHASES
from src.sim.world import ACTION_DIM
from src.utils.logger import logger

DATASET_MAGIC = b"ACDS"
DATASET_VERSION = 2
NO_PHASE = 255

STEP_DTYPE = np.dtype([
    ("views", "<f4", (len(VIEW_IDS), IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE)),
    ("cloud", "<f4", (CLOUD_POINTS, 4)),
    ("state", "<f4", (STATE_DIM,)),
    ("action", "<f4", (ACTION_DIM,)),
    ("phase", "u1"),
])


def _encode_trajectory(traj: Trajectory) -> bytes:
    task = traj.task.encode("utf-8")
    parts = [
        struct.pack("<I", len(task)),
        task,
        struct.pack("<QI", traj.seed, traj.length),
        struct.pack("<I", len(traj.instruction)),
        np.asarray(traj.instruction, dtype="<u4").tobytes(),
        struct.pack("<f", traj.freq),
    ]
    records = np.empty(traj.length, dtype=STEP_DTYPE)
    records["views"] = traj.views
    records["cloud"] = traj.clouds
    records["state"] = traj.states
    records["action"] = traj.actions
    records["phase"] = [PHASES.index(p) for p in traj.phases] if traj.phases else NO_PHASE
    parts.append(records.tobytes())
    return b"".join(parts)


def _decode_trajectory(reader: ByteReader) -> Trajectory:
    (task_len,) = reader.unpack("<I")
    task = reader.take(task_len).decode("utf-8")
    seed, length = reader.unpack("<QI")
    (n_ids,) = reader.unpack("<I")
    ids = np.frombuffer(reader.take(4 * n_ids), dtype="<u4")
    (freq,) = reader.unpack("<f")
    records = np.frombuffer(reader.take(STEP_DTYPE.itemsize * length), dtype=STEP_DTYPE)
    return Trajectory(
        task=task,
        seed=int(seed),
        instruction=[int(i) for i in ids],
        freq=float(freq),
        views=records["views"].astype(np.float32),
        clouds=records["cloud"].astype(np.float32),
        states=records["state"].astype(np.float32),
        actions=records["action"].astype(np.float32),
        phases=_decode_phases(records["phase"]),
    )


def _decode_phases(codes: np.ndarray) -> List[str]:
    """整条轨迹要么全部未标注, 要么全部是合法下标"""
    if np.all(codes == NO_PHASE):
        return []
    if np.any(codes >= len(PHASES)):
        raise FormatError(f"阶段编码非法: {sorted(set(codes.tolist()))}")
    return [PHASES[int(c)] for c in codes]


def save_dataset(trajectories: Sequence[Trajectory], path: Union[str, Path]) -> Path:
    """写出数据集文件(父目录自动创建)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<II", DATASET_VERSION, len(trajectories)))
        for traj in trajectories:
            f.write(_encode_trajectory(traj))
    logger.info(f"数据集已保存: {path} ({len(trajectories)} 条轨迹)")
    return path


def load_dataset(path: Union[str, Path]) -> List[Trajectory]:
    """
    读取数据集文件

    Raises:
        BadMagicError: 文件头不是 ACDS
        VersionMismatchError: 版本号不支持
        TruncatedFileError: 文件被截断
        FormatError: 末尾有多余字节
    """
    path = Path(path)
    reader = ByteReader(path.read_bytes())
    magic = reader.take(4)
    if magic != DATASET_MAGIC:
        raise BadMagicError(f"{path} 不是数据集文件 (magic={magic!r})")
    version, count = reader.unpack("<II")
    if version != DATASET_VERSION:
        raise VersionMismatchError(f"数据集版本 {version} 不受支持(期望 {DATASET_VERSION})")
    trajectories = [_decode_trajectory(reader) for _ in range(count)]
    if reader.remaining:
        raise FormatError(f"{path} 末尾有 {reader.remaining} 个多余字节")
    logger.debug(f"数据集已加载: {path} ({count} 条轨迹)")
    return trajectories
