"""工具模块 - 日志等辅助功能"""
