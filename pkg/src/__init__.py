"""
AC-DiT 桌面级移动操作扩散策略

子包:
    sim       确定性仿真器与脚本专家
    data      演示采集、数据集格式、归一化、滑动窗口
    networks  编码器、感知自适应融合、扩散调度、DiT 动作头
    numerics  参数仓库、检查点格式、梯度校验
    services  两阶段训练、闭环评估、消融实验

环境变量(.env)由 src.core.config 在导入时加载。
"""

__version__ = "0.1.0"
