"""
AC-DiT 测试包

每个组件一个测试文件, 共享夹具见 conftest.py
"""
