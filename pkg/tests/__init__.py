"""claims-vgnn 测试套件"""
