from setuptools import find_packages, setup

setup(
    name="ofdm-amc",
    version="1.0.0.dev1",
    description="Modulation classification for bit-loaded OFDM at half the inference cost",
    license="MIT",
    packages=find_packages(include=['src']),
    python_requires='>=3.9',
    install_requires=[
        'numpy>=1.20.2',
        'pandas>=1.2.3',
        'scikit-learn>=1.2.1',
        'joblib>=1.3',
        'scipy>=1.7',
        'torch>=1.13'
    ],
    extras_require={
        'test': ['pytest>=7']
    },
    include_package_data=True,
    entry_points={
        'console_scripts': ['ofdm-amc=src.__init__:main']
    }
)
