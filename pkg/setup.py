try:
    from setuptools import setup
except ImportError:
    from distutils.core import setup


setup(name='admmsampling',
      version='0.1.0',
      description="""GP based adaptive sampling for networks of nonholonomic
      mobile sensors, solved with linearised and successive convexification
      consensus ADMM.""",
      packages=['admmsampling'],
      install_requires=['numpy>=1.17', 'scipy>=1.4', 'sympy>=1.5'],
      extras_require={'test': ['pytest', 'flake8>=3.0'],
                      'bench': ['pybench']},
      entry_points={'console_scripts': ['admmsampling = admmsampling.cli:main']})
