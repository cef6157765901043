"""核心模块 - 配置加载与异常定义"""
